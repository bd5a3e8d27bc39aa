"""Per-episode bookkeeping shared by both learners."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CurvePoint:
    episode: int
    reward: float
    length: int
    success: bool


class EpisodeTracker:
    """Accumulates step rewards into CurvePoints with 1-based episode indices."""

    def __init__(self):
        self.episodes = 0
        self.total_steps = 0
        self._reward = 0.0
        self._length = 0

    def record_step(self, result) -> None:
        self._reward += result.reward
        self._length += 1
        self.total_steps += 1

    def end_episode(self, result) -> CurvePoint:
        self.episodes += 1
        point = CurvePoint(self.episodes, self._reward, self._length, bool(result.terminated))
        self._reward = 0.0
        self._length = 0
        return point
