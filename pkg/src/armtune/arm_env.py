"""Kinematic 7-DOF reach environment.

The arm has no dynamics: an action is a per-joint angle increment, the
end-effector (EE) position follows from forward kinematics, and the reward
is the negated EE-to-goal distance.  Episodes end with ``terminated`` when
the EE is strictly closer than ``success_threshold`` to the goal, or with
``truncated`` once ``max_steps`` steps have elapsed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from armtune.errors import DomainError, UsageError

N_JOINTS = 7
OBS_DIM = 13
ACT_DIM = 7


@dataclass(frozen=True)
class ArmModel:
    """Modified-DH description of a serial arm.

    ``link_parameters`` rows are ``(a_{i-1}, alpha_{i-1}, d_i, theta_offset_i)``
    so joint ``i``'s frame is ``RotX(alpha) TransX(a) RotZ(q + offset) TransZ(d)``
    relative to frame ``i-1``.  ``tool_offset`` is a fixed translation in the
    last joint frame.
    """

    link_parameters: np.ndarray
    joint_limits: np.ndarray
    tool_offset: np.ndarray

    def __post_init__(self):
        dh = np.asarray(self.link_parameters, dtype=float)
        lim = np.asarray(self.joint_limits, dtype=float)
        tool = np.asarray(self.tool_offset, dtype=float)
        if dh.shape != (N_JOINTS, 4):
            raise ValueError(f"dh: expected shape (7, 4), got {dh.shape}")
        if lim.shape != (N_JOINTS, 2):
            raise ValueError(f"limits: expected shape (7, 2), got {lim.shape}")
        if not np.all(lim[:, 0] < lim[:, 1]):
            raise ValueError("limits: every lower bound must be below its upper bound")
        if tool.shape != (3,):
            raise ValueError(f"tool_offset: expected 3 values, got shape {tool.shape}")
        for name, arr in (("dh", dh), ("limits", lim), ("tool_offset", tool)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite entry")
        object.__setattr__(self, "link_parameters", dh)
        object.__setattr__(self, "joint_limits", lim)
        object.__setattr__(self, "tool_offset", tool)

    @property
    def home(self) -> np.ndarray:
        return self.joint_limits.mean(axis=1)


def _field(doc: dict, name: str, shape: tuple) -> np.ndarray:
    if name not in doc:
        raise ValueError(f"{name}: missing field")
    try:
        arr = np.asarray(doc[name], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name}: not a numeric array ({exc})") from None
    if arr.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def parse_arm_model(text: str) -> ArmModel:
    """Parse the JSON arm document (fields ``dh``, ``limits``, ``tool_offset``)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"arm model: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValueError("arm model: top level must be an object")
    return ArmModel(
        _field(doc, "dh", (N_JOINTS, 4)),
        _field(doc, "limits", (N_JOINTS, 2)),
        _field(doc, "tool_offset", (3,)),
    )


def load_arm_model(path: str | Path | None = None) -> ArmModel:
    """Load an arm model file; with no path, the bundled Panda table."""
    if path is None:
        text = resources.files("armtune").joinpath("data/panda.json").read_text()
    else:
        text = Path(path).read_text()
    return parse_arm_model(text)


def forward_kinematics(model: ArmModel, joints, check_limits: bool = True) -> np.ndarray:
    """Tool-point position in the base frame.

    Raises DomainError when a joint lies outside ``model.joint_limits``
    (pass ``check_limits=False`` to evaluate the raw kinematic chain).
    """
    q = np.asarray(joints, dtype=float)
    if q.shape != (N_JOINTS,):
        raise UsageError(f"expected 7 joint angles, got shape {q.shape}")
    if check_limits:
        lim = model.joint_limits
        bad = np.flatnonzero((q < lim[:, 0]) | (q > lim[:, 1]))
        if bad.size:
            i = int(bad[0])
            raise DomainError(
                f"joint {i + 1} angle {q[i]!r} outside [{lim[i, 0]}, {lim[i, 1]}]"
            )
    rot = np.eye(3)
    pos = np.zeros(3)
    for (a, alpha, d, offset), qi in zip(model.link_parameters, q):
        ca, sa = math.cos(alpha), math.sin(alpha)
        ct, st = math.cos(qi + offset), math.sin(qi + offset)
        # RotX(alpha) TransX(a) RotZ(theta) TransZ(d), rotation and translation parts
        local_rot = np.array(
            [[ct, -st, 0.0], [ca * st, ca * ct, -sa], [sa * st, sa * ct, ca]]
        )
        local_pos = np.array([a, -sa * d, ca * d])
        pos = pos + rot @ local_pos
        rot = rot @ local_rot
    return pos + rot @ model.tool_offset


def reward(ee, goal) -> float:
    """Negated Euclidean distance between EE and goal."""
    diff = np.asarray(ee, dtype=float) - np.asarray(goal, dtype=float)
    return -math.sqrt(float(diff @ diff))


@dataclass(frozen=True)
class Observation:
    joints: np.ndarray
    ee_pos: np.ndarray
    goal_pos: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.joints, self.ee_pos, self.goal_pos])


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    terminated: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


@dataclass(frozen=True)
class EnvConfig:
    """Episode and task settings.

    ``goal_box`` of ``None`` means a ``goal_box_size`` cube centred on the
    home-pose EE position.  ``home`` of ``None`` means the mid-range of each
    joint's limits.
    """

    max_steps: int = 50
    action_scale: float = 0.05
    success_threshold: float = 0.05
    goal_box: tuple | None = None
    goal_box_size: float = 0.3
    home: tuple | None = None
    randomize_home: bool = False

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not self.action_scale > 0:
            raise ValueError("action_scale must be positive")
        if not self.success_threshold > 0:
            raise ValueError("success_threshold must be positive")
        if self.goal_box is not None:
            lo, hi = (np.asarray(c, dtype=float) for c in self.goal_box)
            if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi):
                raise ValueError("goal_box corners must be 3-vectors ordered componentwise")


def sample_goal(rng: np.random.Generator, box) -> np.ndarray:
    """Uniform point in an axis-aligned box; exactly three uniform draws."""
    lo, hi = (np.asarray(c, dtype=float) for c in box)
    u = rng.random(3)
    return lo + u * (hi - lo)


@dataclass
class ReachEnv:
    """Reach-target MDP over a kinematic arm.

    Single-threaded; instances share no mutable state.
    """

    config: EnvConfig = field(default_factory=EnvConfig)
    model: ArmModel = field(default_factory=load_arm_model)
    seed: int | None = None

    def __post_init__(self):
        home = self.model.home if self.config.home is None else np.asarray(self.config.home, float)
        forward_kinematics(self.model, home)
        self.home = home
        self.home_ee = forward_kinematics(self.model, home)
        if self.config.goal_box is None:
            half = self.config.goal_box_size / 2.0
            self.goal_box = (self.home_ee - half, self.home_ee + half)
        else:
            self.goal_box = tuple(np.asarray(c, dtype=float) for c in self.config.goal_box)
        self.rng = np.random.default_rng(self.seed)
        self.joints = home.copy()
        self.ee = self.home_ee.copy()
        self.goal = self.home_ee.copy()
        self.steps = 0
        self.active = False

    def observation(self) -> Observation:
        return Observation(self.joints.copy(), self.ee.copy(), self.goal.copy())

    def sample_goal(self) -> np.ndarray:
        return sample_goal(self.rng, self.goal_box)

    def reset(self, seed: int | None = None) -> Observation:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if self.config.randomize_home:
            lim = self.model.joint_limits
            self.joints = lim[:, 0] + self.rng.random(N_JOINTS) * (lim[:, 1] - lim[:, 0])
        else:
            self.joints = self.home.copy()
        self.ee = forward_kinematics(self.model, self.joints)
        self.goal = self.sample_goal()
        self.steps = 0
        self.active = True
        return self.observation()

    def step(self, action) -> StepResult:
        if not self.active:
            raise UsageError("step() called on a finished episode; call reset() first")
        a = np.asarray(action, dtype=float)
        if a.shape != (ACT_DIM,) or not np.all(np.isfinite(a)):
            raise UsageError("action must be 7 finite values")
        lim = self.model.joint_limits
        q = self.joints + self.config.action_scale * np.clip(a, -1.0, 1.0)
        self.joints = np.clip(q, lim[:, 0], lim[:, 1])
        self.ee = forward_kinematics(self.model, self.joints)
        self.steps += 1
        r = reward(self.ee, self.goal)
        terminated = -r < self.config.success_threshold
        truncated = not terminated and self.steps >= self.config.max_steps
        self.active = not (terminated or truncated)
        return StepResult(self.observation(), r, terminated, truncated)


def make_env(max_steps: int = 50, seed: int | None = None, **overrides) -> ReachEnv:
    return ReachEnv(replace(EnvConfig(), max_steps=max_steps, **overrides), seed=seed)
