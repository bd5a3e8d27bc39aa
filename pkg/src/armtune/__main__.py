import sys

from armtune.cli import main

sys.exit(main())
