"""Default-configuration learning check: 2,000 episodes per seed, first vs last decile reward.

    python scripts/smoke_learning.py --algo sac --seeds 5 --hidden 64,64 --out results/smoke_sac.json
"""
import argparse
import json
import time
from dataclasses import asdict
from pathlib import Path

from armtune.harness import smoke_learning


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--algo", choices=("ppo", "sac"), required=True)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--hidden", help="hidden widths, e.g. 64,64 (default: the algorithm's own)")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    hidden = tuple(int(h) for h in args.hidden.split(",")) if args.hidden else None

    rows = []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        res = smoke_learning(args.algo, seed, args.episodes, hidden)
        row = {**asdict(res), "improved": res.improved, "seconds": round(time.perf_counter() - t0, 1)}
        rows.append(row)
        print(json.dumps(row), flush=True)
        if args.out:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(json.dumps({"hidden": hidden, "runs": rows}, indent=2) + "\n")
    wins = sum(r["improved"] for r in rows)
    print(f"{args.algo}: improved in {wins}/{len(rows)} seeds")


if __name__ == "__main__":
    main()
