"""Tree-structured Parzen Estimator over flat mixed search spaces.

Each dimension is modelled independently (the spaces here have no
conditional parameters, so the tree collapses to a product).  Complete
trials are split into a "good" top quantile and a "bad" remainder; a Parzen
mixture is fitted to each, and the candidate maximizing
``log l(x) - log g(x)`` among draws from ``l`` is suggested.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from armtune.errors import UsageError

KINDS = ("uniform", "log_uniform", "int_uniform", "int_log_uniform", "categorical")
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ParamDomain:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    choices: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            choices = tuple(self.choices)
            if not choices:
                raise ValueError(f"{self.name}: categorical domain needs at least one choice")
            if len(set(map(repr, choices))) != len(choices):
                raise ValueError(f"{self.name}: duplicate categories")
            object.__setattr__(self, "choices", choices)
            return
        if self.low is None or self.high is None or not self.low < self.high:
            raise ValueError(f"{self.name}: need low < high")
        if self.kind.endswith("log_uniform") and self.low <= 0:
            raise ValueError(f"{self.name}: log domains need low > 0")

    @property
    def is_int(self) -> bool:
        return self.kind.startswith("int")

    @property
    def is_log(self) -> bool:
        return self.kind.endswith("log_uniform")

    def bounds(self) -> tuple[float, float]:
        """Support in the transformed (possibly log) continuous space.

        Integer kinds widen by half a unit so rounding gives every integer equal width.
        """
        lo, hi = float(self.low), float(self.high)
        if self.is_int:
            lo, hi = lo - 0.5, hi + 0.5
        if self.is_log:
            return math.log(lo), math.log(hi)
        return lo, hi

    def to_internal(self, value) -> float:
        return math.log(value) if self.is_log else float(value)

    def from_internal(self, x: float):
        v = math.exp(x) if self.is_log else float(x)
        if self.is_int:
            return int(min(max(round(v), int(self.low)), int(self.high)))
        return min(max(v, float(self.low)), float(self.high))

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return any(value == c and type(value) is type(c) for c in self.choices)
        if self.is_int and not (isinstance(value, (int, np.integer)) and not isinstance(value, bool)):
            return False
        return self.low <= value <= self.high

    def sample_uniform(self, rng: np.random.Generator):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.kind == "int_uniform":
            return int(rng.integers(int(self.low), int(self.high) + 1))
        lo, hi = self.bounds()
        return self.from_internal(rng.uniform(lo, hi))

    def to_dict(self) -> dict:
        if self.kind == "categorical":
            return {"name": self.name, "kind": self.kind, "choices": list(self.choices)}
        return {"name": self.name, "kind": self.kind, "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamDomain":
        return cls(d["name"], d["kind"], d.get("low"), d.get("high"), tuple(d.get("choices", ())))


@dataclass(frozen=True)
class SearchSpace:
    domains: tuple

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.domains]

    def __iter__(self):
        return iter(self.domains)

    def __len__(self):
        return len(self.domains)

    def __getitem__(self, name: str) -> ParamDomain:
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(name)

    def validate(self, params: dict) -> None:
        if set(params) != set(self.names):
            raise UsageError(f"params keys {sorted(params)} do not match space {self.names}")
        for d in self.domains:
            if not d.contains(params[d.name]):
                raise UsageError(f"{d.name}={params[d.name]!r} outside its domain")

    def sample_uniform(self, rng: np.random.Generator) -> dict:
        return {d.name: d.sample_uniform(rng) for d in self.domains}

    def to_list(self) -> list[dict]:
        return [d.to_dict() for d in self.domains]

    @classmethod
    def from_list(cls, items: list[dict]) -> "SearchSpace":
        return cls(tuple(ParamDomain.from_dict(i) for i in items))

    def diff(self, other: "SearchSpace") -> list[str]:
        """Human-readable differences, empty when the spaces are identical."""
        a = {d.name: d.to_dict() for d in self.domains}
        b = {d.name: d.to_dict() for d in other.domains}
        out = []
        for name in sorted(set(a) | set(b)):
            if a.get(name) != b.get(name):
                out.append(f"{name}: {a.get(name)} != {b.get(name)}")
        if not out and self.names != other.names:
            out.append(f"order: {self.names} != {other.names}")
        return out


@dataclass
class Trial:
    id: int
    params: dict
    value: float | None = None
    state: str = "running"
    seed: int = 0
    started_at: str | None = None
    finished_at: str | None = None


# ---------------------------------------------------------------------------
# Parzen estimators
# ---------------------------------------------------------------------------
@dataclass
class ParzenEstimator:
    """Truncated-Gaussian mixture in transformed space, or smoothed category weights."""

    domain: ParamDomain
    centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bandwidths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    low: float = 0.0
    high: float = 1.0

    def _mass(self) -> np.ndarray:
        a = (self.low - self.centers) / self.bandwidths
        b = (self.high - self.centers) / self.bandwidths
        return ndtr(b) - ndtr(a)

    def log_pdf(self, x) -> np.ndarray:
        """Log-density in transformed space (or log-probability of categories)."""
        if self.domain.kind == "categorical":
            idx = [self.domain.choices.index(v) for v in np.atleast_1d(np.asarray(x, dtype=object))]
            return np.log(self.weights[idx])
        x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
        z = (x - self.centers) / self.bandwidths
        log_comp = (
            -0.5 * z * z
            - _LOG_SQRT_2PI
            - np.log(self.bandwidths)
            - np.log(self._mass())
            + np.log(self.weights)
        )
        top = log_comp.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(log_comp - top).sum(axis=1, keepdims=True)))[:, 0]

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_pdf(x))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws; transformed-space floats, or category indices for categoricals."""
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        if self.domain.kind == "categorical":
            return k
        mu, sd = self.centers[k], self.bandwidths[k]
        lo_cdf = ndtr((self.low - mu) / sd)
        hi_cdf = ndtr((self.high - mu) / sd)
        u = lo_cdf + rng.random(n) * (hi_cdf - lo_cdf)
        x = mu + sd * ndtri(u)
        return np.clip(x, self.low, self.high)


def parzen_fit(values, domain: ParamDomain) -> ParzenEstimator:
    """One component per observation plus a domain-wide prior, equal weights.

    Bandwidth of each observation component is the distance to the farther of
    its two sorted neighbours (domain bounds act as outer neighbours), clamped
    to ``[width / min(100, 1 + n), width]``.  The floor relaxes to width / 100
    only once there are enough observations; a fixed width / 100 floor lets a
    few early good points lock the search into a small neighbourhood.
    """
    values = list(values)
    if domain.kind == "categorical":
        counts = np.ones(len(domain.choices))
        for v in values:
            counts[domain.choices.index(v)] += 1.0
        return ParzenEstimator(domain, weights=counts / counts.sum())
    lo, hi = domain.bounds()
    width = hi - lo
    obs = np.array([domain.to_internal(v) for v in values], dtype=float)
    bw = np.zeros(len(obs))
    if len(obs):
        order = np.argsort(obs, kind="stable")
        padded = np.concatenate([[lo], obs[order], [hi]])
        left = padded[1:-1] - padded[:-2]
        right = padded[2:] - padded[1:-1]
        bw[order] = np.maximum(left, right)
        bw = np.clip(bw, width / min(100.0, 1.0 + len(obs)), width)
    centers = np.concatenate([obs, [0.5 * (lo + hi)]])
    bandwidths = np.concatenate([bw, [width]])
    weights = np.full(len(centers), 1.0 / len(centers))
    return ParzenEstimator(domain, centers, bandwidths, weights, lo, hi)


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TPEConfig:
    gamma_fraction: float = 0.25
    max_good: int = 25
    n_startup_trials: int = 10
    n_ei_candidates: int = 24


def split_trials(history: list[Trial], gamma_fraction: float = 0.25, max_good: int = 25):
    """Top ``min(max_good, max(1, ceil(gamma * n)))`` by value (higher is better) vs the rest.

    Ties are broken by lower trial id.
    """
    if not history:
        raise UsageError("cannot split an empty history")
    ranked = sorted(history, key=lambda t: (-t.value, t.id))
    n_good = min(max_good, max(1, math.ceil(gamma_fraction * len(ranked))))
    return ranked[:n_good], ranked[n_good:]


def suggest(space: SearchSpace, history: list[Trial], rng: np.random.Generator, config: TPEConfig = TPEConfig()) -> dict:
    """Next parameter map.  Uniform during warm-up, TPE afterwards.

    Failed trials are appended to the bad group after the split.
    """
    complete = [t for t in history if t.state == "complete"]
    if len(complete) < config.n_startup_trials or not complete:
        return space.sample_uniform(rng)
    good, bad = split_trials(complete, config.gamma_fraction, config.max_good)
    bad = bad + [t for t in history if t.state == "failed" and t.params]
    out = {}
    for d in space:
        l = parzen_fit([t.params[d.name] for t in good], d)
        g = parzen_fit([t.params[d.name] for t in bad], d)
        draws = l.sample(rng, config.n_ei_candidates)
        if d.kind == "categorical":
            cands = [d.choices[i] for i in draws]
            score = l.log_pdf(cands) - g.log_pdf(cands)
            out[d.name] = cands[int(np.argmax(score))]
        else:
            score = l.log_pdf(draws) - g.log_pdf(draws)
            out[d.name] = d.from_internal(float(draws[int(np.argmax(score))]))
    return out


def importance(history: list[Trial], space: SearchSpace) -> dict[str, float]:
    """Binned main-effect importance; scores sum to 1.

    Each parameter's trials are ranked and cut into ``q = min(8, n // 5)``
    equal-count bins (categoricals bin by category); the score is the variance
    of per-bin mean objective, normalized across parameters.  All-zero
    variance gives uniform scores.
    """
    complete = sorted((t for t in history if t.state == "complete"), key=lambda t: t.id)
    n = len(complete)
    if n < 20:
        raise UsageError(f"importance needs at least 20 complete trials, got {n}")
    values = np.array([t.value for t in complete], dtype=float)
    q = min(8, n // 5)
    raw = []
    for d in space:
        col = [t.params[d.name] for t in complete]
        if d.kind == "categorical":
            groups = [
                np.flatnonzero([c == v and type(c) is type(v) for c in col]) for v in d.choices
            ]
            groups = [g for g in groups if g.size]
        else:
            order = np.argsort(np.asarray(col, dtype=float), kind="stable")
            groups = np.array_split(order, q)
        means = np.array([values[g].mean() for g in groups])
        raw.append(float(means.var()) if len(means) > 1 else 0.0)
    raw = np.array(raw)
    total = raw.sum()
    if not total > 0:
        scores = np.full(len(raw), 1.0 / len(raw))
    else:
        scores = raw / total
    return dict(zip(space.names, scores.tolist()))
