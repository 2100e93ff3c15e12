"""
Differentiable numeric core shared by every layer of the benchmark.

``Value`` wraps a double precision numpy array and records the operation that
produced it, so ``backward()`` can push gradients through the graph in
reverse topological order. Everything else in the package (embeddings,
recurrent cells, attention, the variational posterior) is written in terms of
these primitives and is checked against central finite differences with
``grad_check``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp

logger = logging.getLogger(__name__)

DTYPE = np.float64
PRED_CLAMP = 1e-7
GRAD_CHECK_EPS = 1e-3
# denominator floor of the relative gradient error
GRAD_CHECK_FLOOR = 1e-8

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class ConfigurationError(ValueError):
    """Raised when shapes, probabilities or settings are inconsistent."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""

    def __init__(self, message: str, location: str | None = None):
        super().__init__(message if location is None else f"{message} (at {location})")
        self.location = location


class GradCheckError(NumericError):
    """Raised when a gradient check hits a non-finite output."""


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(other) -> "Value":
    return other if isinstance(other, Value) else Value(other)


class Value:
    """A node of the computation graph: data plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    # ndarray <op> Value must dispatch to the reflected Value method
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple[Value, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def from_op(cls, data, parents: Iterable["Value"], backward: BackwardFn) -> "Value":
        """Build the output node of an operation.

        ``backward`` receives the output gradient and returns one gradient per
        parent (``None`` where a parent takes no gradient).
        """
        parents = tuple(parents)
        out = cls(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Value{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- reverse pass ------------------------------------------------------

    def _topological_order(self) -> list["Value"]:
        order: list[Value] = []
        visited: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            return
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=DTYPE)
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(self._topological_order()):
            if node._backward is None or node.grad is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node.grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(np.asarray(parent_grad, dtype=DTYPE), parent.data.shape)
                if parent.grad is None:
                    parent.grad = np.array(parent_grad, dtype=DTYPE)
                else:
                    parent.grad = parent.grad + parent_grad

    # -- elementwise arithmetic --------------------------------------------

    def __add__(self, other) -> "Value":
        other = _lift(other)
        return Value.from_op(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other) -> "Value":
        other = _lift(other)
        return Value.from_op(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other) -> "Value":
        return _lift(other) - self

    def __mul__(self, other) -> "Value":
        other = _lift(other)
        a, b = self.data, other.data
        return Value.from_op(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Value":
        other = _lift(other)
        a, b = self.data, other.data
        return Value.from_op(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other) -> "Value":
        return _lift(other) / self

    def __neg__(self) -> "Value":
        return Value.from_op(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float) -> "Value":
        a = self.data
        return Value.from_op(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other) -> "Value":
        other = _lift(other)
        a, b = self.data, other.data

        def backward(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if a.ndim == 1:
                return b @ g, np.outer(a, g)
            if b.ndim == 1:
                return np.multiply.outer(g, b), np.tensordot(a, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
            return g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g

        return Value.from_op(a @ b, (self, other), backward)

    def __rmatmul__(self, other) -> "Value":
        return _lift(other) @ self

    # -- shape manipulation ------------------------------------------------

    def __getitem__(self, key) -> "Value":
        shape = self.data.shape

        def backward(g):
            full = np.zeros(shape, dtype=DTYPE)
            np.add.at(full, key, g)
            return (full,)

        return Value.from_op(self.data[key], (self,), backward)

    def reshape(self, *shape) -> "Value":
        original = self.data.shape
        return Value.from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(original),))

    @property
    def T(self) -> "Value":
        return Value.from_op(self.data.T, (self,), lambda g: (g.T,))

    def sum(self, axis=None, keepdims: bool = False) -> "Value":
        shape = self.data.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Value.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Value":
        count = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    # -- nonlinearities ----------------------------------------------------

    def exp(self) -> "Value":
        out = np.exp(self.data)
        return Value.from_op(out, (self,), lambda g: (g * out,))

    def log(self) -> "Value":
        a = self.data
        return Value.from_op(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self) -> "Value":
        out = np.tanh(self.data)
        return Value.from_op(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> "Value":
        out = expit(self.data)
        return Value.from_op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def softplus(self) -> "Value":
        a = self.data
        return Value.from_op(np.logaddexp(0.0, a), (self,), lambda g: (g * expit(a),))

    def clip(self, low: float, high: float) -> "Value":
        a = self.data
        inside = (a >= low) & (a <= high)
        return Value.from_op(np.clip(a, low, high), (self,), lambda g: (g * inside,))


def parameter(data, name: str | None = None) -> Value:
    """A leaf that owns its array and accumulates gradients."""
    return Value(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    values = [_lift(v) for v in values]
    sizes = [v.data.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]
    return Value.from_op(
        np.concatenate([v.data for v in values], axis=axis),
        values,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(values: Sequence[Value], axis: int = 0) -> Value:
    values = [_lift(v) for v in values]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(values)))

    return Value.from_op(np.stack([v.data for v in values], axis=axis), values, backward)


def masked_softmax(scores: Value, mask: np.ndarray | None = None, axis: int = -1) -> Value:
    """Softmax over ``axis`` restricted to ``mask``; fully masked slices give zeros."""
    data = scores.data
    mask = np.ones(data.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    masked = np.where(mask, data, -np.inf)
    peak = np.max(masked, axis=axis, keepdims=True) if data.size else np.zeros_like(masked)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    weights = np.where(mask, np.exp(masked - peak), 0.0)
    total = weights.sum(axis=axis, keepdims=True)
    out = np.divide(weights, total, out=np.zeros_like(weights), where=total > 0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Value.from_op(out, (scores,), backward)


def log_softmax(scores: Value, axis: int = -1) -> Value:
    data = scores.data
    out = data - logsumexp(data, axis=axis, keepdims=True)
    probs = np.exp(out)
    return Value.from_op(out, (scores,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def sigmoid(x) -> Value:
    return _lift(x).sigmoid()


# -- randomness -------------------------------------------------------------


@dataclass
class RngStream:
    """Seeded random stream; the same seed replays the same draws."""

    seed: int
    counter: int = 0
    _generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._generator = np.random.default_rng(self.seed)

    def _tick(self) -> np.random.Generator:
        self.counter += 1
        return self._generator

    def random(self, size=None) -> np.ndarray:
        return self._tick().random(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._tick().uniform(low, high, size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._tick().normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self._tick().integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._tick().permutation(n)

    def spawn(self, key: int) -> "RngStream":
        """Independent child stream derived from (seed, key)."""
        state = np.random.SeedSequence([self.seed, key]).generate_state(1, dtype=np.uint64)[0]
        return RngStream(int(state))


# -- optimisation -----------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, array: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(array, dtype=DTYPE), v=np.zeros_like(array, dtype=DTYPE))


def adam_step(param: Value, grad, state: AdamState, lr: float) -> Tuple[Value, AdamState]:
    """One bias-corrected Adam update of ``param`` in place."""
    grad = np.asarray(grad, dtype=DTYPE)
    if grad.shape != param.data.shape or state.m.shape != param.data.shape:
        raise ConfigurationError(
            f"Adam shape mismatch: param {param.data.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    if lr < 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}")

    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param, state


class Adam:
    """Adam over a named collection of parameters."""

    def __init__(self, params: Mapping[str, Value], lr: float = 0.001):
        self.params = params
        self.lr = lr
        self.state: Dict[str, AdamState] = {
            name: AdamState.zeros_like(value.data) for name, value in params.items()
        }

    def zero_grad(self) -> None:
        for value in self.params.values():
            value.grad = None

    def step(self) -> None:
        for name, value in self.params.items():
            grad = np.zeros_like(value.data) if value.grad is None else value.grad
            adam_step(value, grad, self.state[name], self.lr)


# -- regularisation and loss ------------------------------------------------


def dropout(x, p: float, training: bool, rng: RngStream | None):
    """Inverted dropout: zero with probability ``p`` and rescale survivors."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs a random stream")
    data = x.data if isinstance(x, Value) else np.asarray(x, dtype=DTYPE)
    keep = (rng.random(data.shape) >= p) / (1.0 - p)
    return x * keep


def weighted_bce(pred, label, w_pos: float = 1.0) -> Value:
    """Per-example log-loss with the positive class weighted by ``w_pos``."""
    if w_pos <= 0:
        raise ConfigurationError(f"positive class weight must be positive, got {w_pos}")
    p = _lift(pred).clip(PRED_CLAMP, 1.0 - PRED_CLAMP)
    y = np.asarray(label, dtype=DTYPE)
    return -(w_pos * y * p.log() + (1.0 - y) * (1.0 - p).log())


def require_finite(array: np.ndarray, location: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError("non-finite value", location)


# -- verification -----------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    errors: Dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def grad_check(
    forward: Callable[[], Value],
    params: Mapping[str, Value],
    tolerance: float = 1e-6,
    eps: float = GRAD_CHECK_EPS,
) -> GradCheckReport:
    """Compare reverse-mode gradients with central finite differences.

    ``forward`` must be deterministic and return a scalar ``Value``. Numeric
    gradients use the five-point central stencil with step ``eps``. The
    reported error per parameter is the maximum over its entries of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    for value in params.values():
        value.data = np.array(value.data, dtype=DTYPE)
        value.grad = None

    out = forward()
    if out.data.size != 1:
        raise ConfigurationError(f"grad_check needs a scalar output, got shape {out.data.shape}")
    if not np.isfinite(out.data).all():
        raise GradCheckError("non-finite forward output", "unperturbed parameters")
    out.backward()

    errors: Dict[str, float] = {}
    for name, value in params.items():
        analytic = np.zeros_like(value.data) if value.grad is None else value.grad.copy()
        worst = 0.0
        for index in np.ndindex(value.data.shape):
            original = value.data[index]
            outputs = []
            for step in (2.0, 1.0, -1.0, -2.0):
                value.data[index] = original + step * eps
                outputs.append(float(forward().data))
            value.data[index] = original
            if not np.isfinite(outputs).all():
                raise GradCheckError("non-finite perturbed output", f"{name}{list(index)}")
            far_plus, plus, minus, far_minus = outputs
            numeric = (8.0 * (plus - minus) - (far_plus - far_minus)) / (12.0 * eps)
            a = float(analytic[index])
            worst = max(worst, abs(a - numeric) / max(GRAD_CHECK_FLOOR, abs(a) + abs(numeric)))
        errors[name] = worst

    report = GradCheckReport(errors=errors, tolerance=tolerance)
    logger.debug("gradient check max error %.3e at %s", report.max_error, report.worst)
    return report
