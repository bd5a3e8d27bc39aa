"""Soft Actor-Critic with twin critics, target networks and a fixed temperature."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from armtune import neural as nn
from armtune.arm_env import ACT_DIM, OBS_DIM, ReachEnv
from armtune.errors import NumericError, UsageError
from armtune.training import EpisodeTracker


@dataclass(frozen=True)
class SACConfig:
    buffer_size: int = 1_000_000
    learning_starts: int = 1000
    batch_size: int = 256
    tau: float = 0.005
    gamma: float = 0.99
    learning_rate: float = 3e-4
    ent_coef: float = 0.2
    target_update_interval: int = 1
    gradient_steps: int = 1
    use_sde: bool = False
    hidden: tuple = (256, 256)
    activation: str = "relu"

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.learning_starts > self.buffer_size:
            raise ValueError("learning_starts must not exceed buffer_size")
        if self.gradient_steps < 1 or self.target_update_interval < 1:
            raise ValueError("gradient_steps and target_update_interval must be >= 1")
        if self.batch_size < 1 or self.buffer_size < 1:
            raise ValueError("batch_size and buffer_size must be positive")
        if self.ent_coef < 0 or not self.learning_rate > 0:
            raise ValueError("ent_coef must be >= 0 and learning_rate > 0")

    @classmethod
    def from_params(cls, params: dict, **extra) -> "SACConfig":
        """Build from a search-space record; ``learning_starts`` is capped at ``buffer_size``."""
        kw = {k: params[k] for k in params if k in cls.__dataclass_fields__}
        kw.update(extra)
        if "learning_starts" in kw:
            kw["learning_starts"] = min(
                int(kw["learning_starts"]), int(kw.get("buffer_size", cls.buffer_size))
            )
        if "use_sde" in kw:
            kw["use_sde"] = bool(kw["use_sde"])
        if "hidden" in kw:
            kw["hidden"] = tuple(kw["hidden"])
        return cls(**kw)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        if capacity < 1:
            raise UsageError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminated = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs, terminated) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminated[i] = terminated
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        """Uniform with replacement."""
        if self.size < batch_size:
            raise UsageError(f"buffer holds {self.size} transitions, batch of {batch_size} requested")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.take(idx)

    def take(self, idx) -> dict:
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "terminated": self.terminated[idx],
            "index": np.asarray(idx),
        }


def soft_update(online: np.ndarray, target: np.ndarray, tau: float) -> None:
    """``target <- tau * online + (1 - tau) * target`` in place."""
    if online.shape != target.shape:
        raise UsageError("online and target shapes differ")
    target[...] = tau * online + (1.0 - tau) * target


def soft_q_target(rewards, terminated, next_q1, next_q2, next_log_prob, gamma, alpha):
    """Entropy-regularized Bellman target; terminated rows return the reward exactly."""
    soft_value = np.minimum(next_q1, next_q2) - alpha * next_log_prob
    return np.where(terminated, rewards, rewards + gamma * soft_value)


@dataclass
class StepReport:
    reward: float
    done: bool
    random_action: bool
    critic_updates: int = 0
    actor_updates: int = 0
    target_updates: int = 0
    critic_loss: float = float("nan")
    actor_loss: float = float("nan")


class SACAgent:
    algo = "sac"

    def __init__(self, config: SACConfig, seed: int = 0):
        self.config = config
        init_ss, act_ss, replay_ss, update_ss = np.random.SeedSequence(seed).spawn(4)
        init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(act_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.update_rng = np.random.default_rng(update_ss)
        hidden = tuple(config.hidden)
        self.actor_spec = nn.MlpSpec(OBS_DIM, hidden, 2 * ACT_DIM, config.activation)
        self.critic_spec = nn.MlpSpec(OBS_DIM + ACT_DIM, hidden, 1, config.activation)
        self.actor = nn.init_mlp(self.actor_spec, init_rng, head_gain=0.01)
        self.critics = [nn.init_mlp(self.critic_spec, init_rng, head_gain=1.0) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.opt = {
            "actor": nn.AdamState.like(self.actor.flat),
            "critic1": nn.AdamState.like(self.critics[0].flat),
            "critic2": nn.AdamState.like(self.critics[1].flat),
        }
        self.buffer = ReplayBuffer(config.buffer_size)
        self.tracker = EpisodeTracker()
        self.gradient_iterations = 0
        self._obs: np.ndarray | None = None
        self._episode_noise: np.ndarray | None = None

    # -- acting ---------------------------------------------------------
    def actor_head(self, obs):
        out = nn.mlp_forward(self.actor, self.actor_spec, obs)
        mean = out[..., :ACT_DIM]
        log_std = np.clip(out[..., ACT_DIM:], nn.LOG_STD_MIN, nn.LOG_STD_MAX)
        return mean, log_std

    def act(self, obs, deterministic: bool = False, rng=None) -> np.ndarray:
        obs = obs.flat() if hasattr(obs, "flat") and callable(obs.flat) else np.asarray(obs, float)
        mean, log_std = self.actor_head(obs)
        if deterministic:
            return np.tanh(mean)
        noise = None
        if self.config.use_sde and rng is None:
            if self._episode_noise is None:
                self._episode_noise = self.rng.standard_normal(ACT_DIM)
            noise = self._episode_noise
        action, _ = nn.squashed_sample_and_log_prob(mean, log_std, rng or self.rng, noise)
        return action

    def q_values(self, params_list, obs, actions):
        x = np.concatenate([obs, actions], axis=-1)
        return [nn.mlp_forward(p, self.critic_spec, x)[..., 0] for p in params_list]

    # -- losses -----------------------------------------------------------
    def critic_target(self, batch: dict, noise: np.ndarray) -> np.ndarray:
        cfg = self.config
        mean, log_std = self.actor_head(batch["next_obs"])
        next_a, next_logp = nn.squashed_sample_and_log_prob(mean, log_std, noise=noise)
        q1, q2 = self.q_values(self.targets, batch["next_obs"], next_a)
        y = soft_q_target(batch["rewards"], batch["terminated"], q1, q2, next_logp, cfg.gamma, cfg.ent_coef)
        return y

    def critic_loss(self, batch: dict, y: np.ndarray):
        """Returns (total loss tensor, [module1, module2])."""
        x = np.concatenate([batch["obs"], batch["actions"]], axis=1)
        mods = [nn.Module(p, self.critic_spec) for p in self.critics]
        losses = [nn.mean(nn.square(nn.sum_(m(x), axis=1) - y)) for m in mods]
        return losses[0] + losses[1], mods

    def actor_loss(self, batch: dict, noise: np.ndarray):
        """``mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))`` with reparameterized ``a``."""
        actor = nn.Module(self.actor, self.actor_spec)
        out = actor(batch["obs"])
        mean = nn.columns(out, 0, ACT_DIM)
        log_std = nn.clip(nn.columns(out, ACT_DIM, 2 * ACT_DIM), nn.LOG_STD_MIN, nn.LOG_STD_MAX)
        action, logp = nn.squashed_sample_and_log_prob_t(mean, log_std, noise)
        x = nn.concat(batch["obs"], action)
        q1, q2 = (
            nn.sum_(nn.Module(p, self.critic_spec, trainable=False)(x), axis=1) for p in self.critics
        )
        loss = nn.mean(self.config.ent_coef * logp - nn.minimum(q1, q2))
        return loss, actor, logp

    # -- updates ----------------------------------------------------------
    def critic_update(self, batch: dict) -> float:
        noise = self.update_rng.standard_normal((len(batch["rewards"]), ACT_DIM))
        y = self.critic_target(batch, noise)
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite critic target")
        loss, mods = self.critic_loss(batch, y)
        nn.backprop(loss)
        for i, m in enumerate(mods):
            nn.adam_step(self.critics[i].flat, m.grad(), self.opt[f"critic{i + 1}"], self.config.learning_rate)
        return float(loss.value)

    def actor_update(self, batch: dict) -> float:
        noise = self.update_rng.standard_normal((len(batch["rewards"]), ACT_DIM))
        loss, actor, _ = self.actor_loss(batch, noise)
        value = float(loss.value)
        if not math.isfinite(value):
            raise NumericError("non-finite actor loss")
        nn.backprop(loss)
        nn.adam_step(self.actor.flat, actor.grad(), self.opt["actor"], self.config.learning_rate)
        return value

    def gradient_iteration(self) -> tuple[float, float, bool]:
        batch = self.buffer.sample(self.config.batch_size, self.replay_rng)
        c = self.critic_update(batch)
        a = self.actor_update(batch)
        self.gradient_iterations += 1
        updated = self.gradient_iterations % self.config.target_update_interval == 0
        if updated:
            for online, target in zip(self.critics, self.targets):
                soft_update(online.flat, target.flat, self.config.tau)
        return c, a, updated

    # -- environment loop -------------------------------------------------
    def learning_started(self) -> bool:
        return (
            self.tracker.total_steps >= self.config.learning_starts
            and len(self.buffer) >= self.config.batch_size
        )

    def train_step(self, env: ReachEnv, on_episode: Callable | None = None) -> StepReport:
        """One environment step followed by ``gradient_steps`` updates once learning has started."""
        if self._obs is None:
            self._obs = env.reset().flat()
            self._episode_noise = None
        random_action = self.tracker.total_steps < self.config.learning_starts
        if random_action:
            action = self.rng.uniform(-1.0, 1.0, ACT_DIM)
        else:
            action = self.act(self._obs)
        res = env.step(action)
        next_obs = res.observation.flat()
        self.buffer.push(self._obs, action, res.reward, next_obs, res.terminated)
        self.tracker.record_step(res)
        report = StepReport(res.reward, res.done, random_action)
        if res.done:
            point = self.tracker.end_episode(res)
            if on_episode is not None:
                on_episode(point)
            next_obs = env.reset().flat()
            self._episode_noise = None
        self._obs = next_obs
        if self.learning_started():
            for _ in range(self.config.gradient_steps):
                c, a, updated = self.gradient_iteration()
                report.critic_updates += 1
                report.actor_updates += 1
                report.target_updates += int(updated)
                report.critic_loss, report.actor_loss = c, a
        return report

    def learn(self, env: ReachEnv, episodes: int, on_episode: Callable | None = None) -> None:
        target = self.tracker.episodes + episodes
        while self.tracker.episodes < target:
            self.train_step(env, on_episode)

    # -- persistence ----------------------------------------------------
    def state_arrays(self) -> dict:
        out = {
            "actor/flat": self.actor.flat,
            "critic1/flat": self.critics[0].flat,
            "critic2/flat": self.critics[1].flat,
            "target1/flat": self.targets[0].flat,
            "target2/flat": self.targets[1].flat,
            "gradient_iterations": np.array(self.gradient_iterations),
        }
        for name, st in self.opt.items():
            out[f"adam/{name}/m"] = st.first_moment
            out[f"adam/{name}/v"] = st.second_moment
            out[f"adam/{name}/t"] = np.array(st.step_count)
        return out

    def load_arrays(self, arrays: dict) -> None:
        self.actor.flat[...] = arrays["actor/flat"]
        for i in range(2):
            self.critics[i].flat[...] = arrays[f"critic{i + 1}/flat"]
            self.targets[i].flat[...] = arrays[f"target{i + 1}/flat"]
        self.gradient_iterations = int(arrays["gradient_iterations"])
        for name, st in self.opt.items():
            st.first_moment[...] = arrays[f"adam/{name}/m"]
            st.second_moment[...] = arrays[f"adam/{name}/v"]
            st.step_count = int(arrays[f"adam/{name}/t"])

    def config_record(self) -> dict:
        return asdict(self.config)
