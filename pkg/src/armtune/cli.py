"""``armtune`` command line: optimize, train, evaluate, report, bench-tpe.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from armtune import harness, spaces
from armtune.errors import NumericError, UsageError
from armtune.study import StudyConfig, best_trial, read_journal, run_study
from armtune.tpe import TPEConfig

EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _hidden(text: str | None):
    return tuple(_ints(text)) if text else None


def _load_params(args) -> dict:
    algo = args.algo
    if args.params:
        src = Path(args.params)
        params = json.loads(src.read_text() if src.exists() else args.params)
        merged = dict(spaces.DEFAULTS[algo])
        merged.update(params)
        return merged
    if args.preset == "default":
        return dict(spaces.DEFAULTS[algo])
    if args.preset == "best-paper":
        return dict(spaces.PUBLISHED_BEST[algo])
    if args.preset == "best-from-journal":
        if not args.journal:
            raise UsageError("--preset best-from-journal needs --journal")
        return dict(best_trial(read_journal(args.journal)).params)
    raise UsageError(f"unknown preset {args.preset!r}")


def cmd_optimize(args) -> int:
    cfg = StudyConfig(
        algo=args.algo,
        n_trials=args.trials,
        n_startup_trials=args.warmup,
        trial_budget_episodes=args.budget_episodes,
        objective_eval_episodes=args.eval_episodes,
        base_seed=args.seed,
        journal=args.journal,
        tpe=TPEConfig(n_startup_trials=args.warmup),
        hidden=_hidden(args.hidden),
        jobs=args.jobs,
        record_wallclock=args.wallclock,
    )
    best = run_study(cfg)
    print(json.dumps({"best_id": best.id, "value": best.value, "params": best.params}))
    return 0


def cmd_train(args) -> int:
    params = _load_params(args)
    res = harness.train_full(
        args.algo, params, args.episodes, _ints(args.checkpoints) if args.checkpoints else [],
        args.seed, args.out, label=args.label, hidden=_hidden(args.hidden),
    )
    print(json.dumps({
        "curve": str(res.curve_path),
        "checkpoints": [asdict(c) for c in res.checkpoints],
    }))
    return 0


def cmd_evaluate(args) -> int:
    res = harness.evaluate_success(args.checkpoint, args.targets, args.max_steps, args.seed, model=args.model or "")
    doc = json.dumps(asdict(res))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(doc + "\n")
    print(doc)
    return 0


def cmd_report(args) -> int:
    curves = {}
    for item in args.curves or []:
        label, _, path = item.partition("=")
        if not path:
            raise UsageError(f"--curves expects label=path, got {item!r}")
        curves[label] = path
    paths = harness.report_emit(args.out, journal=args.journal, curves=curves, evals=args.evals, window=args.window)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return 0


def cmd_bench(args) -> int:
    out = Path(args.out) if args.out else None
    rows = harness.bench_tpe(args.function, args.trials, args.seeds, args.warmup, out=out)
    if out is None:
        harness.write_bench(rows, "/dev/stdout")
    else:
        print(out.read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="armtune", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="run a warm-up + TPE hyperparameter study")
    o.add_argument("--algo", choices=("ppo", "sac"), required=True)
    o.add_argument("--trials", type=int, default=20, help="total trials (default 20)")
    o.add_argument("--warmup", type=int, default=10, help="random warm-up trials (default 10)")
    o.add_argument("--budget-episodes", type=int, default=2000, help="training episodes per trial")
    o.add_argument("--eval-episodes", type=int, default=100, help="tail episodes averaged into the objective")
    o.add_argument("--seed", type=int, default=0, help="base seed; trial i uses seed+i")
    o.add_argument("--journal", required=True, help="JSON-lines journal path (resumed if present)")
    o.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    o.add_argument("--hidden", help="hidden layer widths, e.g. 64,64")
    o.add_argument("--wallclock", action="store_true", help="record timestamps (journal no longer byte-reproducible)")
    o.set_defaults(func=cmd_optimize)

    t = sub.add_parser("train", help="train one configuration with checkpoints")
    t.add_argument("--algo", choices=("ppo", "sac"), required=True)
    t.add_argument("--preset", choices=("default", "best-paper", "best-from-journal"), default="default")
    t.add_argument("--params", help="JSON object or JSON file overriding the defaults")
    t.add_argument("--journal", help="journal for --preset best-from-journal")
    t.add_argument("--episodes", type=int, default=2000)
    t.add_argument("--checkpoints", help="comma-separated milestone episodes, e.g. 20000,50000")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--label", help="run label used in file names (default: algo)")
    t.add_argument("--hidden", help="hidden layer widths, e.g. 64,64")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="success rate of a checkpoint on random targets")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--targets", type=int, default=1000)
    e.add_argument("--max-steps", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--model", help="model label for summary.csv")
    e.add_argument("--out", help="write the result JSON here")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="emit pcp/importance/curves/summary CSVs")
    r.add_argument("--journal")
    r.add_argument("--curves", action="append", help="label=curve.csv (repeatable)")
    r.add_argument("--evals", action="append", help="evaluation result JSON (repeatable)")
    r.add_argument("--window", type=int, default=100, help="smoothing window")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)

    b = sub.add_parser("bench-tpe", help="TPE vs random search on a synthetic function")
    b.add_argument("--function", choices=sorted(harness.BENCH_FUNCTIONS), default="sphere")
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--seeds", type=int, default=20)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError) as exc:
        print(f"armtune: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"armtune: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"armtune: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
