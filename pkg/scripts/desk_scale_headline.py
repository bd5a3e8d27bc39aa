"""Desk-scale tuned-vs-default comparison: per study seed, a 20-trial study with
2,000-episode budgets, then 5,000-episode retrains of the best and the default
configuration, each evaluated on 1,000 random targets at 5 steps.

    python scripts/desk_scale_headline.py --algo ppo --out results/desk_scale
"""
import argparse
import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from armtune.harness import desk_scale_headline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--algo", choices=("ppo", "sac"), required=True)
    ap.add_argument("--study-seeds", default="0,1,2")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--budget", type=int, default=2000)
    ap.add_argument("--retrain", type=int, default=5000)
    ap.add_argument("--targets", type=int, default=1000)
    ap.add_argument("--hidden", help="hidden widths, e.g. 64,64")
    ap.add_argument("--out", type=Path, default=Path("results/desk_scale"))
    args = ap.parse_args()
    hidden = tuple(int(h) for h in args.hidden.split(",")) if args.hidden else None

    runs = []
    summary_path = args.out / f"{args.algo}_summary.json"
    for s in (int(x) for x in args.study_seeds.split(",")):
        t0 = time.perf_counter()
        res = desk_scale_headline(args.algo, s, args.out, args.trials, 10, args.budget, args.retrain,
                                  args.targets, hidden=hidden)
        runs.append({**asdict(res), "seconds": round(time.perf_counter() - t0, 1)})
        print(json.dumps(runs[-1]), flush=True)
        tuned = float(np.median([r["tuned_success"] for r in runs]))
        default = float(np.median([r["default_success"] for r in runs]))
        summary_path.parent.mkdir(parents=True, exist_ok=True)
        summary_path.write_text(json.dumps({
            "algo": args.algo, "hidden": hidden, "runs": runs,
            "median_tuned_success": tuned, "median_default_success": default,
            "margin_pp": 100 * (tuned - default),
        }, indent=2) + "\n")
    print(f"{args.algo}: median tuned {tuned:.3f} vs default {default:.3f} ({100 * (tuned - default):+.1f} pp)")


if __name__ == "__main__":
    main()
