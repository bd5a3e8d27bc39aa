"""Agent checkpoints as uncompressed ``.npz`` archives.

Layout (format version 1):

``meta``                 0-d unicode array holding a JSON object with keys
                         ``format`` (``"armtune-checkpoint"``), ``version``,
                         ``algo``, ``config`` (full agent config), ``params``
                         (the originating hyperparameter record), ``seed``,
                         ``episode`` and ``specs`` (network dimensions).
``<net>/flat``           float64 parameter vector per network
                         (PPO: policy, value; SAC: actor, critic1, critic2,
                         target1, target2) plus ``log_std`` for PPO.
``adam/<net>/{m,v,t}``   Adam first/second moments and step count.
``gradient_iterations``  SAC only.

Arrays are stored as raw float64, so save -> load is bit-exact.  Replay
buffer contents are not stored.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from armtune.errors import UsageError

FORMAT = "armtune-checkpoint"
VERSION = 1


def _specs(agent) -> dict:
    if agent.algo == "ppo":
        return {"policy": asdict(agent.policy_spec), "value": asdict(agent.value_spec)}
    return {"actor": asdict(agent.actor_spec), "critic": asdict(agent.critic_spec)}


def save_checkpoint(path, agent, params: dict, seed: int, episode: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "algo": agent.algo,
        "config": agent.config_record(),
        "params": params,
        "seed": seed,
        "episode": episode,
        "specs": _specs(agent),
    }
    arrays = {k: np.asarray(v) for k, v in agent.state_arrays().items()}
    with path.open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)
    return path


def read_checkpoint(path) -> tuple[dict, dict]:
    """(meta, arrays) from a checkpoint file."""
    with np.load(Path(path), allow_pickle=False) as z:
        if "meta" not in z.files:
            raise UsageError(f"{path}: not a checkpoint (no meta)")
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in z.files if k != "meta"}
    if meta.get("format") != FORMAT:
        raise UsageError(f"{path}: unknown format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def load_checkpoint(path):
    """Rebuild the agent stored in ``path``; returns ``(agent, meta)``."""
    from armtune.ppo import PPOAgent, PPOConfig
    from armtune.sac import SACAgent, SACConfig

    meta, arrays = read_checkpoint(path)
    cfg = dict(meta["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    if meta["algo"] == "ppo":
        agent = PPOAgent(PPOConfig(**cfg), seed=meta["seed"])
    elif meta["algo"] == "sac":
        agent = SACAgent(SACConfig(**cfg), seed=meta["seed"])
    else:
        raise UsageError(f"{path}: unknown algo {meta['algo']!r}")
    try:
        agent.load_arrays(arrays)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: checkpoint does not match {meta['algo']} layout ({exc})") from None
    return agent, meta
