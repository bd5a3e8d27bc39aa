"""Proximal Policy Optimization with GAE on the reach task."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from armtune import neural as nn
from armtune.arm_env import ACT_DIM, OBS_DIM, ReachEnv
from armtune.errors import NumericError, UsageError
from armtune.training import EpisodeTracker


@dataclass(frozen=True)
class PPOConfig:
    learning_rate: float = 3e-4
    n_steps: int = 2048
    batch_size: int = 64
    gamma: float = 0.99
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    n_epochs: int = 10
    normalize_advantage: bool = True
    hidden: tuple = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not self.clip_range > 0:
            raise ValueError("clip_range must be positive")
        if self.n_steps < 1 or self.n_epochs < 1 or self.batch_size < 1:
            raise ValueError("n_steps, n_epochs and batch_size must be positive")
        if self.batch_size > self.n_steps:
            raise ValueError("batch_size must not exceed n_steps")
        if not self.learning_rate > 0 or not self.max_grad_norm > 0:
            raise ValueError("learning_rate and max_grad_norm must be positive")

    @classmethod
    def from_params(cls, params: dict, **extra) -> "PPOConfig":
        """Build from a search-space record; ``batch_size`` is capped at ``n_steps``."""
        kw = {k: params[k] for k in params if k in cls.__dataclass_fields__}
        kw.update(extra)
        if "batch_size" in kw:
            kw["batch_size"] = min(int(kw["batch_size"]), int(kw.get("n_steps", cls.n_steps)))
        if "hidden" in kw:
            kw["hidden"] = tuple(kw["hidden"])
        return cls(**kw)


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    # gamma * V(final observation) for steps that ended by truncation, else 0
    truncation_bootstrap: np.ndarray
    bootstrap_value: float = 0.0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)


@dataclass
class LossStats:
    policy_objective: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    grad_norm: float = 0.0
    n_updates: int = 0


def clipped_objective(ratio, advantage, clip_range):
    """Per-sample ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio = np.asarray(ratio, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantage)


def compute_gae(rewards, values, dones, bootstrap_value, gamma, gae_lambda):
    """Backward GAE recursion.  ``dones[t]`` means the episode ended at step t.

    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if not len(values) == len(dones) == n:
        raise UsageError("rewards, values and dones must have equal length")
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        last = delta + gamma * gae_lambda * live * last
        adv[t] = last
    return adv, adv + values


def ppo_loss(policy: nn.Module, value: nn.Module, log_std: nn.Tensor, batch: dict, config: PPOConfig):
    """Scalar loss ``-L_clip + vf_coef * MSE - ent_coef * entropy`` and diagnostics.

    ``batch`` keys: obs, actions, old_log_probs, advantages (already normalized), returns.
    """
    mean = policy(batch["obs"])
    logp = nn.diag_gaussian_log_prob_t(mean, log_std, batch["actions"])
    ratio = nn.exp(logp - batch["old_log_probs"])
    adv = batch["advantages"]
    eps = config.clip_range
    surrogate = nn.mean(nn.minimum(ratio * adv, nn.clip(ratio, 1.0 - eps, 1.0 + eps) * adv))
    v = nn.sum_(value(batch["obs"]), axis=1)
    value_loss = nn.mean(nn.square(batch["returns"] - v))
    entropy = nn.sum_(log_std) + 0.5 * ACT_DIM * (1.0 + nn.LOG_2PI)
    loss = -surrogate + config.vf_coef * value_loss - config.ent_coef * entropy
    info = {
        "policy_objective": float(surrogate.value),
        "value_loss": float(value_loss.value),
        "entropy": float(entropy.value),
        "clip_fraction": float(np.mean(np.abs(ratio.value - 1.0) > eps)),
    }
    return loss, info


class PPOAgent:
    """Gaussian policy (state-independent log-std) and separate value network."""

    algo = "ppo"

    def __init__(self, config: PPOConfig, seed: int = 0, init_rng=None, sample_rng=None):
        self.config = config
        streams = np.random.SeedSequence(seed).spawn(2)
        init_rng = init_rng or np.random.default_rng(streams[0])
        self.rng = sample_rng or np.random.default_rng(streams[1])
        hidden = tuple(config.hidden)
        self.policy_spec = nn.MlpSpec(OBS_DIM, hidden, ACT_DIM, config.activation)
        self.value_spec = nn.MlpSpec(OBS_DIM, hidden, 1, config.activation)
        self.policy = nn.init_mlp(self.policy_spec, init_rng, head_gain=0.01)
        self.value = nn.init_mlp(self.value_spec, init_rng, head_gain=1.0)
        self.log_std = np.zeros(ACT_DIM)
        self.opt = {
            "policy": nn.AdamState.like(self.policy.flat),
            "value": nn.AdamState.like(self.value.flat),
            "log_std": nn.AdamState.like(self.log_std),
        }
        self.tracker = EpisodeTracker()
        self._obs: np.ndarray | None = None

    # -- acting ---------------------------------------------------------
    def act(self, obs, deterministic: bool = False, rng=None) -> np.ndarray:
        action, _, _ = self.policy_step(obs, deterministic, rng)
        return action

    def policy_step(self, obs, deterministic: bool = False, rng=None):
        """Returns (env action in [-1, 1], raw Gaussian sample, its log-prob)."""
        obs = obs.flat() if hasattr(obs, "flat") and callable(obs.flat) else np.asarray(obs, float)
        mean = nn.mlp_forward(self.policy, self.policy_spec, obs)
        if deterministic:
            raw = mean
        else:
            rng = rng or self.rng
            raw = mean + np.exp(self.log_std) * rng.standard_normal(ACT_DIM)
        logp = float(nn.diag_gaussian_log_prob(mean, self.log_std, raw))
        return np.clip(raw, -1.0, 1.0), raw, logp

    def predict_value(self, obs: np.ndarray) -> np.ndarray:
        return nn.mlp_forward(self.value, self.value_spec, obs)[..., 0]

    # -- data collection ------------------------------------------------
    def collect_rollout(self, env: ReachEnv, n_steps: int, on_episode: Callable | None = None) -> RolloutBuffer:
        if n_steps < 1:
            raise UsageError("n_steps must be at least 1")
        obs_buf = np.zeros((n_steps, OBS_DIM))
        act_buf = np.zeros((n_steps, ACT_DIM))
        rew = np.zeros(n_steps)
        dones = np.zeros(n_steps, dtype=bool)
        logps = np.zeros(n_steps)
        trunc = np.zeros(n_steps)
        if self._obs is None:
            self._obs = env.reset().flat()
        for t in range(n_steps):
            obs_buf[t] = self._obs
            _, raw, logp = self.policy_step(self._obs)
            act_buf[t] = raw
            logps[t] = logp
            res = env.step(raw)
            rew[t] = res.reward
            next_obs = res.observation.flat()
            self.tracker.record_step(res)
            if res.done:
                dones[t] = True
                if res.truncated:
                    trunc[t] = self.config.gamma * float(self.predict_value(next_obs))
                point = self.tracker.end_episode(res)
                if on_episode is not None:
                    on_episode(point)
                next_obs = env.reset().flat()
            self._obs = next_obs
        values = self.predict_value(obs_buf)
        boot = 0.0 if dones[-1] else float(self.predict_value(self._obs))
        return RolloutBuffer(obs_buf, act_buf, rew, dones, values, logps, trunc, boot)

    def compute_advantages(self, buf: RolloutBuffer) -> None:
        buf.advantages, buf.returns = compute_gae(
            buf.rewards + buf.truncation_bootstrap,
            buf.values,
            buf.dones,
            buf.bootstrap_value,
            self.config.gamma,
            self.config.gae_lambda,
        )

    # -- learning -------------------------------------------------------
    def update(self, buf: RolloutBuffer) -> LossStats:
        if buf.advantages is None:
            raise UsageError("advantages must be computed before update")
        cfg = self.config
        n = len(buf)
        stats = LossStats()
        for _ in range(cfg.n_epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                adv = buf.advantages[idx]
                if cfg.normalize_advantage and len(idx) > 1:
                    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
                batch = {
                    "obs": buf.obs[idx],
                    "actions": buf.actions[idx],
                    "old_log_probs": buf.log_probs[idx],
                    "advantages": adv,
                    "returns": buf.returns[idx],
                }
                info = self.gradient_step(batch)
                stats.policy_objective += info["policy_objective"]
                stats.value_loss += info["value_loss"]
                stats.entropy += info["entropy"]
                stats.clip_fraction += info["clip_fraction"]
                stats.grad_norm += info["grad_norm"]
                stats.n_updates += 1
        k = max(stats.n_updates, 1)
        for name in ("policy_objective", "value_loss", "entropy", "clip_fraction", "grad_norm"):
            setattr(stats, name, getattr(stats, name) / k)
        return stats

    def gradient_step(self, batch: dict) -> dict:
        cfg = self.config
        policy = nn.Module(self.policy, self.policy_spec)
        value = nn.Module(self.value, self.value_spec)
        log_std = nn.parameter(self.log_std)
        loss, info = ppo_loss(policy, value, log_std, batch, cfg)
        if not math.isfinite(float(loss.value)):
            raise NumericError(f"non-finite PPO loss: {info}")
        nn.backprop(loss)
        grads = [policy.grad(), value.grad(), np.zeros(ACT_DIM) if log_std.grad is None else log_std.grad.copy()]
        info["grad_norm"] = nn.clip_grad_norm(grads, cfg.max_grad_norm)
        nn.adam_step(self.policy.flat, grads[0], self.opt["policy"], cfg.learning_rate)
        nn.adam_step(self.value.flat, grads[1], self.opt["value"], cfg.learning_rate)
        nn.adam_step(self.log_std, grads[2], self.opt["log_std"], cfg.learning_rate)
        np.clip(self.log_std, nn.LOG_STD_MIN, nn.LOG_STD_MAX, out=self.log_std)
        return info

    def learn(self, env: ReachEnv, episodes: int, on_episode: Callable | None = None) -> None:
        """Train until ``episodes`` more episodes have completed."""
        target = self.tracker.episodes + episodes
        while self.tracker.episodes < target:
            def hook(point):
                if point.episode <= target and on_episode is not None:
                    on_episode(point)

            buf = self.collect_rollout(env, self.config.n_steps, hook)
            if self.tracker.episodes >= target:
                break
            self.compute_advantages(buf)
            self.update(buf)

    # -- persistence ----------------------------------------------------
    def state_arrays(self) -> dict:
        out = {"policy/flat": self.policy.flat, "value/flat": self.value.flat, "log_std": self.log_std}
        for name, st in self.opt.items():
            out[f"adam/{name}/m"] = st.first_moment
            out[f"adam/{name}/v"] = st.second_moment
            out[f"adam/{name}/t"] = np.array(st.step_count)
        return out

    def load_arrays(self, arrays: dict) -> None:
        self.policy.flat[...] = arrays["policy/flat"]
        self.value.flat[...] = arrays["value/flat"]
        self.log_std[...] = arrays["log_std"]
        for name, st in self.opt.items():
            st.first_moment[...] = arrays[f"adam/{name}/m"]
            st.second_moment[...] = arrays[f"adam/{name}/v"]
            st.step_count = int(arrays[f"adam/{name}/t"])

    def config_record(self) -> dict:
        return asdict(self.config)
