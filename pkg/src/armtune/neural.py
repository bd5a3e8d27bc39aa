"""Dense networks, reverse-mode autodiff over numpy arrays, Adam, Gaussian heads.

The autodiff is tape-free: every :class:`Tensor` remembers its parents and a
closure that pushes its gradient to them.  :func:`backprop` topologically
sorts the graph from a scalar loss and runs the closures in reverse.

All math is float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from armtune.errors import NumericError, UsageError

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6


# ---------------------------------------------------------------------------
# autodiff
# ---------------------------------------------------------------------------
class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")
    # make ndarray <op> Tensor dispatch to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    """Leaf tensor that collects a gradient.  ``value`` is used without copying."""
    t = Tensor.__new__(Tensor)
    t.value = value
    t.grad = None
    t.parents = ()
    t.backward_fn = None
    t.requires_grad = True
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.value + b.value, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Tensor(a.value * b.value, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(a.value @ b.value, (a, b), back)


def affine(x, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for a batch ``x`` of shape (n, in)."""
    x = as_tensor(x)

    def back(g):
        gx = g @ w.value.T if x.requires_grad else None
        if not w.requires_grad:
            return gx, None, None
        return gx, x.value.T @ g, g.sum(axis=0)

    return Tensor(x.value @ w.value + b.value, (x, w, b), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return Tensor(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sech2(x: np.ndarray) -> np.ndarray:
    # 1 - tanh(x)**2 without cancellation near saturation
    with np.errstate(over="ignore"):
        return 1.0 / np.cosh(x) ** 2


def sech2(a: Tensor) -> Tensor:
    """``1 - tanh(a)**2``, accurate where ``tanh(a)`` rounds to +-1."""
    y = _sech2(a.value)
    return Tensor(y, (a,), lambda g: (-2.0 * g * y * np.tanh(a.value),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.value, 0.0)
    return Tensor(y, (a,), lambda g: (g * (a.value > 0.0),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return Tensor(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def square(a: Tensor) -> Tensor:
    return Tensor(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def mean(a: Tensor) -> Tensor:
    n = a.value.size
    return Tensor(a.value.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return Tensor(a.value.sum(), (a,), lambda g: (np.full(a.shape, g),))
    return Tensor(
        a.value.sum(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),),
    )


def minimum(a, b) -> Tensor:
    """Elementwise min; the gradient follows the selected branch, ties go to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.value <= b.value

    def back(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return Tensor(np.where(take_a, a.value, b.value), (a, b), back)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes inside (boundary included), zero outside."""
    inside = (a.value >= lo) & (a.value <= hi)
    return Tensor(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        out = np.zeros(a.shape)
        out[:, start:stop] = g
        return (out,)

    return Tensor(a.value[:, start:stop], (a,), back)


def concat(a, b) -> Tensor:
    """Concatenate two batches along the feature axis."""
    a, b = as_tensor(a), as_tensor(b)
    k = a.shape[1]
    return Tensor(
        np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: (g[:, :k], g[:, k:])
    )


def backprop(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable parameter."""
    if loss.value.shape != ():
        raise UsageError(f"loss must be a scalar, got shape {loss.value.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# multilayer perceptrons
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("at least one hidden layer of width >= 1 is required")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]


@dataclass
class MlpParams:
    """Flat parameter vector; ``layout`` holds ``(w_offset, w_shape, b_offset, b_shape)`` per layer."""

    flat: np.ndarray
    layout: list

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "MlpParams":
        layout, offset = [], 0
        w = spec.widths
        for n_in, n_out in zip(w[:-1], w[1:]):
            layout.append((offset, (n_in, n_out), offset + n_in * n_out, (n_out,)))
            offset += n_in * n_out + n_out
        return cls(np.zeros(offset), layout)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) views into ``flat``."""
        out = []
        for w_off, w_shape, b_off, b_shape in self.layout:
            w = self.flat[w_off : w_off + w_shape[0] * w_shape[1]].reshape(w_shape)
            b = self.flat[b_off : b_off + b_shape[0]]
            out.append((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.flat.copy(), list(self.layout))


def orthogonal(rng: np.random.Generator, shape: tuple, gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(spec: MlpSpec, rng: np.random.Generator, head_gain: float = 1.0) -> MlpParams:
    """Orthogonal weights (gain sqrt(2) on hidden layers, ``head_gain`` on the output), zero biases."""
    params = MlpParams.zeros(spec)
    layers = params.layers()
    for i, (w, _) in enumerate(layers):
        gain = head_gain if i == len(layers) - 1 else math.sqrt(2.0)
        w[...] = orthogonal(rng, w.shape, gain)
    return params


def _act(spec: MlpSpec):
    return np.tanh if spec.activation == "tanh" else (lambda z: np.maximum(z, 0.0))


def mlp_forward(params: MlpParams, spec: MlpSpec, x) -> np.ndarray:
    """Plain numpy forward pass for a single input vector or a batch."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != spec.input_dim:
        raise UsageError(f"input has {h.shape[-1]} features, network expects {spec.input_dim}")
    act = _act(spec)
    layers = params.layers()
    for w, b in layers[:-1]:
        h = act(h @ w + b)
    w, b = layers[-1]
    return h @ w + b


class Module:
    """An MLP bound to autodiff leaves for one backward pass."""

    def __init__(self, params: MlpParams, spec: MlpSpec, trainable: bool = True):
        self.params = params
        self.spec = spec
        leaf = parameter if trainable else Tensor
        self.leaves = [(leaf(w), leaf(b)) for w, b in params.layers()]

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.spec.input_dim:
            raise UsageError(
                f"input has {x.shape[-1]} features, network expects {self.spec.input_dim}"
            )
        act = tanh if self.spec.activation == "tanh" else relu
        h = x
        for w, b in self.leaves[:-1]:
            h = act(affine(h, w, b))
        w, b = self.leaves[-1]
        return affine(h, w, b)

    def grad(self) -> np.ndarray:
        """Flat gradient aligned with ``params.flat`` (zeros where no gradient flowed)."""
        out = np.zeros_like(self.params.flat)
        for (w, b), (w_off, w_shape, b_off, b_shape) in zip(self.leaves, self.params.layout):
            if w.grad is not None:
                out[w_off : w_off + w.value.size] = w.grad.ravel()
            if b.grad is not None:
                out[b_off : b_off + b.value.size] = b.grad
        return out


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, flat: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(flat), np.zeros_like(flat), **kw)


def adam_step(flat: np.ndarray, grad: np.ndarray, state: AdamState, learning_rate: float) -> None:
    """Bias-corrected Adam update of ``flat`` in place."""
    if flat.shape != grad.shape or flat.shape != state.first_moment.shape:
        raise UsageError("parameter, gradient and moment shapes disagree")
    if not learning_rate > 0:
        raise UsageError("learning_rate must be positive")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericError(f"non-finite gradient entry at index {int(bad[0])}")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grad
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    flat -= learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(g @ g) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


# ---------------------------------------------------------------------------
# Gaussian policy heads
# ---------------------------------------------------------------------------
def diag_gaussian_log_prob(mean, log_std, action) -> float | np.ndarray:
    """Log-density of a diagonal Gaussian, summed over the last axis."""
    mean, log_std, action = (np.asarray(v, dtype=float) for v in (mean, log_std, action))
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def diag_gaussian_log_prob_t(mean: Tensor, log_std: Tensor, action) -> Tensor:
    """Graph version of :func:`diag_gaussian_log_prob` for a batch."""
    z = (as_tensor(action) - mean) * exp(neg(log_std))
    return sum_(-0.5 * square(z) - log_std - 0.5 * LOG_2PI, axis=-1)


def squash_correction(pre_tanh) -> np.ndarray:
    return np.sum(np.log(_sech2(np.asarray(pre_tanh, dtype=float)) + SQUASH_EPS), axis=-1)


def squashed_sample_and_log_prob(mean, log_std, rng=None, noise=None):
    """Sample ``tanh(mean + exp(log_std) * z)`` and its log-density.

    ``noise`` overrides the standard-normal draw (used for frozen exploration noise).
    """
    mean = np.asarray(mean, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    z = rng.standard_normal(mean.shape) if noise is None else np.asarray(noise, dtype=float)
    pre = mean + np.exp(log_std) * z
    action = np.tanh(pre)
    logp = diag_gaussian_log_prob(mean, log_std, pre) - squash_correction(pre)
    return action, logp


def squashed_sample_and_log_prob_t(mean: Tensor, log_std: Tensor, noise: np.ndarray):
    """Reparameterized graph version; ``noise`` is the standard-normal draw."""
    pre = mean + exp(log_std) * noise
    action = tanh(pre)
    logp = diag_gaussian_log_prob_t(mean, log_std, pre)
    corr = sum_(log(sech2(pre) + SQUASH_EPS), axis=-1)
    return action, logp - corr
