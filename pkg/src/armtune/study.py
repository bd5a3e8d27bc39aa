"""Warm-up + TPE study loop with an append-only JSON-lines journal.

Journal files
-------------
``<journal>``               one JSON object per finished trial, fields
                            ``id, state, seed, value, params, breakdown,
                            started_at, finished_at, history_size_at_suggest``.
``<journal>.meta.json``     study settings and the search space, written once.
``<journal>.running.json``  trials currently being evaluated; a leftover file
                            after a crash identifies orphans, which resume
                            records as ``failed``.

Failed trials store ``value: null``.  Timestamps are ``null`` unless the
study records wall-clock time, so that identical studies write identical
bytes.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from armtune import spaces
from armtune.errors import NumericError, UsageError
from armtune.tpe import SearchSpace, TPEConfig, Trial, suggest

JOURNAL_FIELDS = (
    "id", "state", "seed", "value", "params", "breakdown",
    "started_at", "finished_at", "history_size_at_suggest",
)


@dataclass
class TrialRecord(Trial):
    breakdown: dict = field(default_factory=dict)
    history_size_at_suggest: int = 0

    def to_json(self) -> str:
        value = self.value if self.state == "complete" else None
        doc = {
            "id": self.id,
            "state": self.state,
            "seed": self.seed,
            "value": value,
            "params": self.params,
            "breakdown": self.breakdown,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "history_size_at_suggest": self.history_size_at_suggest,
        }
        return json.dumps(doc, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        value = d.get("value")
        return cls(
            id=int(d["id"]),
            params=d.get("params") or {},
            value=None if value is None else float(value),
            state=d["state"],
            seed=int(d["seed"]),
            started_at=d.get("started_at"),
            finished_at=d.get("finished_at"),
            breakdown=d.get("breakdown") or {},
            history_size_at_suggest=int(d.get("history_size_at_suggest", 0)),
        )


@dataclass
class StudyConfig:
    algo: str | None = "ppo"
    n_trials: int = 20
    n_startup_trials: int = 10
    trial_budget_episodes: int = 2000
    objective_eval_episodes: int = 100
    base_seed: int = 0
    journal: str | Path = "study.jsonl"
    space: SearchSpace | None = None
    tpe: TPEConfig = field(default_factory=TPEConfig)
    hidden: tuple | None = None
    jobs: int = 1
    record_wallclock: bool = False

    def __post_init__(self):
        if self.n_trials < 1 or self.trial_budget_episodes < 1 or self.objective_eval_episodes < 1:
            raise UsageError("n_trials and budgets must be >= 1")
        if not 0 <= self.n_startup_trials <= self.n_trials:
            raise UsageError("n_startup_trials must lie in [0, n_trials]")
        if self.space is None:
            if self.algo not in spaces.SPACES:
                raise UsageError(f"unknown algo {self.algo!r} and no search space given")
            self.space = spaces.SPACES[self.algo]
        self.journal = Path(self.journal)

    def meta(self) -> dict:
        return {
            "algo": self.algo,
            "n_startup_trials": self.n_startup_trials,
            "trial_budget_episodes": self.trial_budget_episodes,
            "objective_eval_episodes": self.objective_eval_episodes,
            "base_seed": self.base_seed,
            "hidden": list(self.hidden) if self.hidden else None,
            "tpe": vars(self.tpe),
            "space": self.space.to_list(),
        }


# ---------------------------------------------------------------------------
# seeds and objective
# ---------------------------------------------------------------------------
def trial_seed(base_seed: int, trial_id: int) -> int:
    return base_seed + trial_id


def sub_seeds(seed: int) -> dict[str, int]:
    """Independent integer seeds for the env, the agent and the sampler."""
    env, agent, sampler = np.random.SeedSequence(seed).spawn(3)
    return {
        "env": int(env.generate_state(1)[0]),
        "agent": int(agent.generate_state(1)[0]),
        "sampler": int(sampler.generate_state(1)[0]),
    }


def make_agent(algo: str, params: dict, seed: int, hidden: tuple | None = None):
    from armtune.ppo import PPOAgent, PPOConfig
    from armtune.sac import SACAgent, SACConfig

    extra = {"hidden": tuple(hidden)} if hidden else {}
    if algo == "ppo":
        return PPOAgent(PPOConfig.from_params(params, **extra), seed=seed)
    if algo == "sac":
        return SACAgent(SACConfig.from_params(params, **extra), seed=seed)
    raise UsageError(f"unknown algo {algo!r}")


def evaluate_trial(
    params: dict,
    algo: str,
    budget: int,
    seed: int,
    eval_episodes: int = 100,
    hidden: tuple | None = None,
) -> tuple[float, dict]:
    """Train a fresh agent for ``budget`` episodes (max 50 steps each).

    Returns the mean episode reward over the last ``eval_episodes`` training
    episodes and a breakdown with the tail success rate.
    """
    from armtune.arm_env import make_env

    spaces.SPACES[algo].validate(params)
    seeds = sub_seeds(seed)
    env = make_env(max_steps=50, seed=seeds["env"])
    agent = make_agent(algo, params, seeds["agent"], hidden)
    rewards, successes = [], []

    def on_episode(p):
        rewards.append(p.reward)
        successes.append(p.success)

    agent.learn(env, budget, on_episode)
    k = min(eval_episodes, len(rewards))
    value = float(np.mean(rewards[-k:]))
    return value, {
        "tail_mean_reward": value,
        "tail_success_rate": float(np.mean(successes[-k:])),
        "episodes": len(rewards),
    }


def _rl_objective(algo, budget, eval_episodes, hidden, params, seed):
    return evaluate_trial(params, algo, budget, seed, eval_episodes, hidden)


# ---------------------------------------------------------------------------
# journal I/O
# ---------------------------------------------------------------------------
def read_journal(path: str | Path) -> list[TrialRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with path.open() as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TrialRecord.from_json(line))
            except (ValueError, KeyError) as exc:
                raise UsageError(f"{path}:{n}: unreadable journal line ({exc})") from None
    return out


def _append(path: Path, record: TrialRecord) -> None:
    with path.open("a") as fh:
        fh.write(record.to_json() + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _write_json(path: Path, doc) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    os.replace(tmp, path)


def _meta_path(journal: Path) -> Path:
    return journal.with_name(journal.name + ".meta.json")


def _running_path(journal: Path) -> Path:
    return journal.with_name(journal.name + ".running.json")


def best_trial(records: list[TrialRecord]) -> TrialRecord:
    """Highest value among complete trials; ties go to the lower id."""
    complete = [r for r in records if r.state == "complete"]
    if not complete:
        raise UsageError("no complete trials")
    return min(complete, key=lambda r: (-r.value, r.id))


def _now(enabled: bool) -> str | None:
    return datetime.now(timezone.utc).isoformat() if enabled else None


# ---------------------------------------------------------------------------
# study loop
# ---------------------------------------------------------------------------
def _prepare(config: StudyConfig) -> list[TrialRecord]:
    """Check/write the meta file, load records and fail leftover orphans."""
    journal = config.journal
    journal.parent.mkdir(parents=True, exist_ok=True)
    meta_path = _meta_path(journal)
    if meta_path.exists():
        stored = json.loads(meta_path.read_text())
        stored_space = SearchSpace.from_list(stored["space"])
        diff = stored_space.diff(config.space)
        if diff:
            raise UsageError("journal search space differs from config:\n  " + "\n  ".join(diff))
    elif journal.exists() and journal.stat().st_size:
        raise UsageError(f"{journal} has records but no {meta_path.name}")
    else:
        _write_json(meta_path, config.meta())
    records = read_journal(journal)
    running = _running_path(journal)
    if running.exists():
        done = {r.id for r in records}
        orphans = [o for o in json.loads(running.read_text()) if o["id"] not in done]
        for o in sorted(orphans, key=lambda o: o["id"]):
            rec = TrialRecord(
                id=o["id"], params=o["params"], state="failed", seed=o["seed"],
                breakdown={"orphan": True, "error": "interrupted before completion"},
                history_size_at_suggest=o.get("history_size_at_suggest", 0),
            )
            _append(journal, rec)
            records.append(rec)
        running.unlink()
    return records


def _counted(records: list[TrialRecord]) -> int:
    return sum(1 for r in records if not r.breakdown.get("orphan"))


def _suggest_params(config: StudyConfig, records: list[TrialRecord], trial_id: int, seed: int) -> dict:
    rng = np.random.default_rng(sub_seeds(seed)["sampler"])
    if trial_id <= config.n_startup_trials:
        return config.space.sample_uniform(rng)
    return suggest(config.space, records, rng, replace(config.tpe, n_startup_trials=1))


def _finish(config, trial_id, seed, params, hist, started, outcome) -> TrialRecord:
    t0, result, error = outcome
    rec = TrialRecord(
        id=trial_id, params=params, seed=seed, started_at=started,
        finished_at=_now(config.record_wallclock), history_size_at_suggest=hist,
    )
    if error is None and result is not None and math.isfinite(result[0]):
        rec.value, rec.breakdown, rec.state = float(result[0]), dict(result[1]), "complete"
    else:
        rec.state = "failed"
        rec.breakdown = {"error": error or f"non-finite objective {result[0] if result else None}"}
    if config.record_wallclock:
        rec.breakdown["duration_s"] = time.monotonic() - t0
    return rec


def _run_objective(objective, params, seed):
    t0 = time.monotonic()
    try:
        return t0, objective(params, seed), None
    except (NumericError, FloatingPointError) as exc:
        return t0, None, f"{type(exc).__name__}: {exc}"


def run_study(config: StudyConfig, objective: Callable | None = None) -> TrialRecord:
    """Run (or continue) a study until ``n_trials`` trials are recorded.

    ``objective(params, seed) -> (value, breakdown)``; by default the RL
    training objective for ``config.algo``.  Returns the best record.
    """
    if objective is None:
        from functools import partial

        objective = partial(
            _rl_objective, config.algo, config.trial_budget_episodes,
            config.objective_eval_episodes, config.hidden,
        )
    records = _prepare(config)
    journal = config.journal
    running_path = _running_path(journal)
    next_id = max((r.id for r in records), default=0) + 1

    if config.jobs <= 1:
        while _counted(records) < config.n_trials:
            tid, seed = next_id, trial_seed(config.base_seed, next_id)
            params = _suggest_params(config, records, tid, seed)
            hist = sum(1 for r in records if r.state == "complete")
            _write_json(running_path, [{"id": tid, "seed": seed, "params": params, "history_size_at_suggest": hist}])
            started = _now(config.record_wallclock)
            rec = _finish(config, tid, seed, params, hist, started, _run_objective(objective, params, seed))
            _append(journal, rec)
            running_path.unlink()
            records.append(rec)
            next_id += 1
        return best_trial(records)

    in_flight: dict = {}
    finished: dict[int, TrialRecord] = {}
    target = config.n_trials - _counted(records)
    launched = 0
    with ProcessPoolExecutor(max_workers=config.jobs) as pool:
        while launched < target or in_flight:
            while launched < target and len(in_flight) < config.jobs:
                tid, seed = next_id, trial_seed(config.base_seed, next_id)
                params = _suggest_params(config, records, tid, seed)
                hist = sum(1 for r in records if r.state == "complete")
                fut = pool.submit(_run_objective, objective, params, seed)
                in_flight[fut] = (tid, seed, params, hist, _now(config.record_wallclock))
                _write_json(running_path, [
                    {"id": v[0], "seed": v[1], "params": v[2], "history_size_at_suggest": v[3]}
                    for v in in_flight.values()
                ])
                next_id += 1
                launched += 1
            done, _ = wait(list(in_flight), return_when=FIRST_COMPLETED)
            for fut in done:
                tid, seed, params, hist, started = in_flight.pop(fut)
                finished[tid] = _finish(config, tid, seed, params, hist, started, fut.result())
            # append in id order so journal ids stay gapless and increasing
            expected = max((r.id for r in records), default=0) + 1
            while expected in finished:
                rec = finished.pop(expected)
                _append(journal, rec)
                records.append(rec)
                expected += 1
            pending = [{"id": v[0], "seed": v[1], "params": v[2], "history_size_at_suggest": v[3]}
                       for v in in_flight.values()]
            pending += [{"id": r.id, "seed": r.seed, "params": r.params,
                         "history_size_at_suggest": r.history_size_at_suggest} for r in finished.values()]
            if pending:
                _write_json(running_path, pending)
            elif running_path.exists():
                running_path.unlink()
    return best_trial(records)


def resume(config: StudyConfig, objective: Callable | None = None) -> TrialRecord:
    """Continue an existing study; the journal must exist."""
    if not Path(config.journal).exists():
        raise UsageError(f"no journal at {config.journal}")
    return run_study(config, objective)
