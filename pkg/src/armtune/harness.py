"""Final-protocol tooling: full training, success-rate evaluation, reports, TPE benchmark."""
from __future__ import annotations

import csv
import json
import logging
import math
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from armtune import spaces
from armtune.arm_env import make_env
from armtune.checkpoint import load_checkpoint, save_checkpoint
from armtune.errors import NumericError, UsageError
from armtune.study import StudyConfig, make_agent, read_journal, run_study, sub_seeds
from armtune.tpe import ParamDomain, SearchSpace, TPEConfig, importance
from armtune.training import CurvePoint

log = logging.getLogger(__name__)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CheckpointMeta:
    episode: int
    algo: str
    params: dict
    seed: int
    path: str


@dataclass
class TrainResult:
    curve_path: Path
    checkpoints: list[CheckpointMeta] = field(default_factory=list)
    curve: list[CurvePoint] = field(default_factory=list)


def train_full(
    algo: str,
    params: dict,
    episodes: int,
    checkpoint_milestones: Iterable[int],
    seed: int,
    out_dir,
    label: str | None = None,
    hidden: tuple | None = None,
) -> TrainResult:
    """Train for ``episodes`` 50-step-capped episodes, logging every episode.

    Checkpoints are written when each milestone episode completes and at the end.
    On a numeric failure the curve file keeps every episode finished so far.
    """
    milestones = sorted(set(int(m) for m in checkpoint_milestones))
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    if any(m < 1 or m > episodes for m in milestones):
        raise UsageError(f"checkpoint milestones must lie in [1, {episodes}]")
    spaces.SPACES[algo].validate(params)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    label = label or algo
    seeds = sub_seeds(seed)
    env = make_env(max_steps=50, seed=seeds["env"])
    agent = make_agent(algo, params, seeds["agent"], hidden)
    save_at = set(milestones) | {episodes}
    result = TrainResult(out_dir / f"{label}_curve.csv")

    with result.curve_path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["episode", "reward", "length", "success"])

        def on_episode(p: CurvePoint):
            w.writerow([p.episode, repr(p.reward), p.length, int(p.success)])
            result.curve.append(p)
            if p.episode in save_at:
                fh.flush()
                path = out_dir / f"{label}_ep{p.episode}.npz"
                save_checkpoint(path, agent, params, seed, p.episode)
                result.checkpoints.append(CheckpointMeta(p.episode, algo, dict(params), seed, str(path)))

        try:
            agent.learn(env, episodes, on_episode)
        finally:
            fh.flush()
    return result


def read_curve(path) -> list[CurvePoint]:
    with Path(path).open(newline="") as fh:
        return [
            CurvePoint(int(r["episode"]), float(r["reward"]), int(r["length"]), bool(int(r["success"])))
            for r in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
@dataclass
class EvalResult:
    success_rate: float
    successes: int
    n_targets: int
    max_steps: int
    seed: int
    mean_steps_to_success: float | None
    model: str = ""
    episodes: int | None = None


def evaluate_success(
    checkpoint,
    n_targets: int,
    max_steps: int = 5,
    seed: int = 0,
    env_factory: Callable | None = None,
    model: str = "",
) -> EvalResult:
    """Deterministic-policy success rate over ``n_targets`` random goals.

    ``checkpoint`` is a path or an object with ``act(obs, deterministic=True)``.
    Success means the episode terminated before truncation.  The seed fixes
    the goal sequence.
    """
    if n_targets < 1:
        raise UsageError("n_targets must be >= 1")
    episodes = None
    if isinstance(checkpoint, (str, Path)):
        agent, meta = load_checkpoint(checkpoint)
        episodes = meta["episode"]
        model = model or meta["algo"]
    else:
        agent = checkpoint
    env = env_factory(max_steps, seed) if env_factory else make_env(max_steps=max_steps, seed=seed)
    successes, steps = 0, []
    for _ in range(n_targets):
        obs = env.reset()
        while True:
            res = env.step(agent.act(obs, deterministic=True))
            obs = res.observation
            if res.done:
                break
        if res.terminated:
            successes += 1
            steps.append(env.steps)
    return EvalResult(
        successes / n_targets, successes, n_targets, max_steps, seed,
        float(np.mean(steps)) if steps else None, model, episodes,
    )


# ---------------------------------------------------------------------------
# convergence speed
# ---------------------------------------------------------------------------
def smooth(rewards, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    r = np.asarray(rewards, dtype=float)
    c = np.cumsum(np.concatenate([[0.0], r]))
    idx = np.arange(1, len(r) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def convergence_episodes(rewards, fraction: float = 0.95, window: int = 100) -> int | None:
    """First 1-based episode whose smoothed reward closes ``fraction`` of the
    gap between the initial and the maximum smoothed reward."""
    if not 0 < fraction < 1:
        raise UsageError("fraction must lie in (0, 1)")
    if window < 1:
        raise UsageError("window must be >= 1")
    if len(rewards) == 0:
        return None
    s = smooth(rewards, window)
    top = s.max()
    threshold = top - (1.0 - fraction) * abs(top - s[0])
    return int(np.argmax(s >= threshold)) + 1


def speedup(tuned_episodes: int, default_episodes: int) -> float:
    """Fractional reduction in episodes to converge, ``1 - tuned / default``."""
    return 1.0 - tuned_episodes / default_episodes


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------
def _journal_space(journal: Path) -> SearchSpace | None:
    meta = journal.with_name(journal.name + ".meta.json")
    if meta.exists():
        return SearchSpace.from_list(json.loads(meta.read_text())["space"])
    return None


def report_emit(
    out_dir,
    journal=None,
    curves: dict | None = None,
    evals: Iterable | None = None,
    space: SearchSpace | None = None,
    window: int = 100,
) -> dict[str, Path]:
    """Write pcp.csv, importance.csv, curves.csv and summary.csv into ``out_dir``.

    ``curves`` maps a run label to a curve CSV path or a reward sequence;
    ``evals`` holds EvalResult objects, dicts, or paths to their JSON.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_journal(journal) if journal else []
    if journal and space is None:
        space = _journal_space(Path(journal))
    complete = [r for r in records if r.state == "complete"]
    if space is None and complete:
        space = SearchSpace(tuple(ParamDomain(n, "uniform", 0.0, 1.0) for n in complete[0].params))
    names = space.names if space else []
    paths = {k: out_dir / f"{k}.csv" for k in ("pcp", "importance", "curves", "summary")}

    if journal and not complete:
        log.warning("journal %s has no complete trials; writing headers only", journal)
    with paths["pcp"].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow([*names, "value"])
        for r in sorted(complete, key=lambda r: r.id):
            w.writerow([r.params[n] for n in names] + [repr(r.value)])

    with paths["importance"].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["param", "score"])
        if len(complete) >= 20:
            scores = importance(complete, space)
            for name, score in sorted(scores.items(), key=lambda kv: (-kv[1], names.index(kv[0]))):
                w.writerow([name, repr(score)])
        elif complete:
            log.warning("importance needs >= 20 complete trials, have %d", len(complete))

    with paths["curves"].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["label", "episode", "reward", "smoothed"])
        for label, src in (curves or {}).items():
            rewards = [p.reward for p in read_curve(src)] if isinstance(src, (str, Path)) else list(src)
            for i, (r, s) in enumerate(zip(rewards, smooth(rewards, window)), 1):
                w.writerow([label, i, repr(float(r)), repr(float(s))])

    rows = []
    for e in evals or []:
        if isinstance(e, (str, Path)):
            e = json.loads(Path(e).read_text())
        elif isinstance(e, EvalResult):
            e = asdict(e)
        rows.append((e["model"], e["episodes"], e["success_rate"]))
    model_order = list(dict.fromkeys(m for m, _, _ in rows))
    rows.sort(key=lambda t: (model_order.index(t[0]), t[1] if t[1] is not None else -1))
    with paths["summary"].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["model", "episodes", "success_rate"])
        for m, ep, rate in rows:
            w.writerow([m, "" if ep is None else ep, repr(float(rate))])
    return paths


# ---------------------------------------------------------------------------
# TPE benchmark
# ---------------------------------------------------------------------------
def sphere(x: float, y: float) -> float:
    return -(x * x + y * y)


def branin_bowl(x: float, y: float) -> float:
    """Negated Branin function (maximum about -0.397887)."""
    a, b, c = 1.0, 5.1 / (4 * math.pi**2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * math.pi)
    return -(a * (y - b * x * x + c * x - r) ** 2 + s * (1 - t) * math.cos(x) + s)


BENCH_FUNCTIONS = {
    "sphere": (sphere, SearchSpace((ParamDomain("x", "uniform", -5.0, 5.0), ParamDomain("y", "uniform", -5.0, 5.0)))),
    "branin": (branin_bowl, SearchSpace((ParamDomain("x", "uniform", -5.0, 10.0), ParamDomain("y", "uniform", 0.0, 15.0)))),
}


def _bench_objective(fn, params, seed):
    return fn(params["x"], params["y"]), {}


@dataclass
class BenchRow:
    seed: int
    tpe_best: float
    random_best: float


def bench_tpe(function: str, n_trials: int, n_seeds: int, n_startup: int = 10, out=None, workdir=None) -> list[BenchRow]:
    """Paired TPE-vs-random studies; the random arm is a study with no TPE phase.

    Writes ``seed,tpe_best,random_best`` rows plus a ``median`` row to ``out`` if given.
    """
    from functools import partial

    if n_seeds < 2:
        raise UsageError("n_seeds must be >= 2")
    fn, space = BENCH_FUNCTIONS[function]
    objective = partial(_bench_objective, fn)
    rows = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for seed in range(n_seeds):
            best = {}
            for arm, startup in (("tpe", min(n_startup, n_trials)), ("random", n_trials)):
                cfg = StudyConfig(
                    algo=None, n_trials=n_trials, n_startup_trials=startup, base_seed=seed * 1000,
                    journal=Path(tmp) / f"{arm}_{seed}.jsonl", space=space,
                )
                best[arm] = run_study(cfg, objective).value
            rows.append(BenchRow(seed, best["tpe"], best["random"]))
    if out is not None:
        write_bench(rows, out)
    return rows


def write_bench(rows: list[BenchRow], out) -> None:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["seed", "tpe_best", "random_best"])
        for r in rows:
            w.writerow([r.seed, repr(r.tpe_best), repr(r.random_best)])
        w.writerow([
            "median",
            repr(float(np.median([r.tpe_best for r in rows]))),
            repr(float(np.median([r.random_best for r in rows]))),
        ])


# ---------------------------------------------------------------------------
# smoke learning
# ---------------------------------------------------------------------------
@dataclass
class SmokeResult:
    algo: str
    seed: int
    episodes: int
    first_decile: float
    last_decile: float
    last_decile_success: float

    @property
    def improved(self) -> bool:
        return self.last_decile > self.first_decile


def smoke_learning(algo: str, seed: int, episodes: int = 2000, hidden: tuple | None = None, params: dict | None = None) -> SmokeResult:
    """Train at the default configuration and compare first- and last-decile mean episode reward."""
    if episodes < 10:
        raise UsageError("episodes must be >= 10")
    params = dict(spaces.DEFAULTS[algo] if params is None else params)
    seeds = sub_seeds(seed)
    env = make_env(max_steps=50, seed=seeds["env"])
    agent = make_agent(algo, params, seeds["agent"], hidden)
    curve: list[CurvePoint] = []
    agent.learn(env, episodes, curve.append)
    rewards = np.array([p.reward for p in curve])
    k = len(rewards) // 10
    return SmokeResult(
        algo, seed, episodes, float(rewards[:k].mean()), float(rewards[-k:].mean()),
        float(np.mean([p.success for p in curve[-k:]])),
    )


# ---------------------------------------------------------------------------
# desk-scale headline protocol
# ---------------------------------------------------------------------------
@dataclass
class HeadlineResult:
    algo: str
    study_seed: int
    best_params: dict
    best_value: float
    tuned_success: float
    default_success: float


def desk_scale_headline(
    algo: str,
    study_seed: int,
    out_dir,
    trials: int = 20,
    warmup: int = 10,
    budget: int = 2000,
    retrain: int = 5000,
    targets: int = 1000,
    max_steps: int = 5,
    hidden: tuple | None = None,
) -> HeadlineResult:
    """Optimize, retrain best vs default for ``retrain`` episodes, compare success rates.

    Both retrains share the training seed and the evaluation goal sequence.
    """
    out_dir = Path(out_dir)
    cfg = StudyConfig(
        algo=algo, n_trials=trials, n_startup_trials=warmup, trial_budget_episodes=budget,
        base_seed=study_seed * 1000, journal=out_dir / f"{algo}_s{study_seed}.jsonl",
        tpe=TPEConfig(n_startup_trials=warmup), hidden=hidden,
    )
    best = run_study(cfg)
    rates = {}
    for label, params in (("tuned", best.params), ("default", spaces.DEFAULTS[algo])):
        run = train_full(algo, params, retrain, [], study_seed, out_dir, f"{algo}_s{study_seed}_{label}", hidden)
        rates[label] = evaluate_success(run.checkpoints[-1].path, targets, max_steps, seed=study_seed).success_rate
    return HeadlineResult(algo, study_seed, best.params, best.value, rates["tuned"], rates["default"])
