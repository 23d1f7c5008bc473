"""Small reverse-mode differentiation layer on top of numpy.

Every value is a :class:`Tensor` holding a float64 ``numpy`` array. Operations
record their parents and a closure mapping the output gradient to one
gradient per parent; :meth:`Tensor.backward` walks the graph in reverse
topological order and accumulates gradients into leaf tensors. Parameters
live in a :class:`ParameterSet`, whose tensors are persistent leaves.

The heavy primitives (``affine`` and ``gru_cell``) are fused ops with
hand-written backward rules so that an unrolled recurrent network over a
40-step episode records only a few hundred graph nodes.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class KinkMonitor:
    """Smallest ``|x|`` fed to a non-differentiable point (relu and abs at 0) while active."""

    def __init__(self) -> None:
        self.closest = np.inf

    def observe(self, d: np.ndarray) -> None:
        if d.size:
            self.closest = min(self.closest, float(np.min(np.abs(d))))


_kink_monitor: KinkMonitor | None = None


@contextlib.contextmanager
def watch_kinks() -> Iterator[KinkMonitor]:
    global _kink_monitor
    previous = _kink_monitor
    _kink_monitor = KinkMonitor()
    try:
        yield _kink_monitor
    finally:
        _kink_monitor = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigurationError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ConfigurationError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic -----------------------------------------------------------

    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> Tensor:
        return add(as_tensor(other), neg(self))

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return neg(self)

    def sum(self, axis=None) -> Tensor:
        return tensor_sum(self, axis)

    def reshape(self, *shape) -> Tensor:
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def __getitem__(self, key) -> Tensor:
        return index(self, key)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    out = np.tanh(0.5 * x)
    out *= 0.5
    out += 0.5
    return out


ACTIVATIONS = ("relu", "elu", "tanh", "sigmoid", "abs")


def activation(kind: str, x: Tensor) -> Tensor:
    """Elementwise nonlinearity; ``kind`` is one of :data:`ACTIVATIONS`."""
    x = as_tensor(x)
    d = x.data
    if _kink_monitor is not None and kind in ("relu", "abs"):
        _kink_monitor.observe(d)
    if kind == "relu":
        out = np.maximum(d, 0.0)
        return _result(out, (x,), lambda g: (g * (d > 0),))
    if kind == "elu":
        neg_part = np.expm1(np.minimum(d, 0.0))
        out = np.where(d >= 0, d, neg_part)
        return _result(out, (x,), lambda g: (g * np.where(d >= 0, 1.0, neg_part + 1.0),))
    if kind == "tanh":
        out = np.tanh(d)
        return _result(out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "sigmoid":
        out = _sigmoid(d)
        return _result(out, (x,), lambda g: (g * out * (1.0 - out),))
    if kind == "abs":
        return _result(np.abs(d), (x,), lambda g: (g * np.sign(d),))
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# shape and reduction ----------------------------------------------------------


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tensors, backward)


def index(a: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing; the gradient is scattered back into zeros."""

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _result(a.data[key], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, backward)


def gather(a: Tensor, index: np.ndarray, axis: int = -1) -> Tensor:
    """``take_along_axis``; ``index`` has ``a``'s shape with extent 1 on ``axis``."""
    index = np.asarray(index, dtype=np.int64)
    out = np.take_along_axis(a.data, index, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, index, g, axis=axis)
        return (full,)

    return _result(out, (a,), backward)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum.

    Every index of one operand must appear in the output or in the other
    operand, which holds for the batched contractions used by the mixers.
    """
    a, b = as_tensor(a), as_tensor(b)
    inputs, out_idx = spec.replace(" ", "").split("->")
    a_idx, b_idx = inputs.split(",")
    out = np.einsum(spec, a.data, b.data)

    def backward(g):
        ga = np.einsum(f"{out_idx},{b_idx}->{a_idx}", g, b.data) if a.requires_grad else None
        gb = np.einsum(f"{out_idx},{a_idx}->{b_idx}", g, a.data) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


# fused layers ---------------------------------------------------------------


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``W @ x + b`` for a vector ``x``, or row-wise for a matrix of inputs."""
    x, W = as_tensor(x), as_tensor(W)
    if W.data.ndim != 2 or x.data.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise ConfigurationError(f"affine: input {x.shape} does not conform to weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ConfigurationError(f"affine: bias {b.shape} does not match weight {W.shape}")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        gx = g @ W.data if x.requires_grad else None
        if x.data.ndim == 1:
            gW = np.outer(g, x.data)
            gb = g
        else:
            gW = g.T @ x.data
            gb = g.sum(axis=0)
        return (gx, gW) if b is None else (gx, gW, gb)

    return _result(out, parents, backward)


def gru_cell(x: Tensor, h: Tensor, params: ParameterSet, prefix: str = "gru") -> Tensor:
    """One GRU step.

    Gates, in the stacked row order (z, r, n) of ``{prefix}.w_x``,
    ``{prefix}.w_h`` and ``{prefix}.b``::

        z  = sigmoid(W_z x + U_z h + b_z)
        r  = sigmoid(W_r x + U_r h + b_r)
        n  = tanh(W_n x + r * (U_n h) + b_n)
        h' = (1 - z) * n + z * h
    """
    x, h = as_tensor(x), as_tensor(h)
    w_x, w_h, bias = params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"]
    hid = w_h.shape[1]
    if (
        w_x.shape[0] != 3 * hid
        or w_h.shape != (3 * hid, hid)
        or bias.shape != (3 * hid,)
        or x.shape[-1] != w_x.shape[1]
        or h.shape[-1] != hid
        or x.data.ndim != h.data.ndim
        or x.shape[:-1] != h.shape[:-1]
    ):
        raise ConfigurationError(
            f"gru_cell: x {x.shape}, h {h.shape} do not conform to w_x {w_x.shape}, w_h {w_h.shape}"
        )
    xa = x.data @ w_x.data.T
    xa += bias.data
    # a constant all-zero state (first step of an unroll) needs no recurrent product
    zero_h = not h.requires_grad and not h.data.any()
    if zero_h:
        hn = None
        gates = _sigmoid(xa[..., : 2 * hid])
        n = np.tanh(xa[..., 2 * hid :])
    else:
        ha = h.data @ w_h.data.T
        hn = ha[..., 2 * hid :]
        pre = xa[..., : 2 * hid] + ha[..., : 2 * hid]
        gates = _sigmoid(pre)
        n = gates[..., hid:] * hn
        n += xa[..., 2 * hid :]
        np.tanh(n, out=n)
    z = gates[..., :hid]
    r = gates[..., hid:]
    # h' = n + z * (h - n)
    out = h.data - n
    out *= z
    out += n

    def backward(g):
        one_minus_z = 1.0 - z
        da = np.empty(g.shape[:-1] + (3 * hid,))
        dz, dr, dn = da[..., :hid], da[..., hid : 2 * hid], da[..., 2 * hid :]
        np.subtract(h.data, n, out=dz)
        dz *= g
        dz *= z
        dz *= one_minus_z
        np.multiply(n, n, out=dn)
        np.subtract(1.0, dn, out=dn)
        dn *= g
        dn *= one_minus_z
        if zero_h:
            dr[...] = 0.0
        else:
            np.multiply(dn, hn, out=dr)
            dr *= r
            dr *= 1.0 - r
        gx = da @ w_x.data if x.requires_grad else None
        dh_pre = None
        if h.requires_grad or not zero_h:
            dh_pre = da.copy()
            dh_pre[..., 2 * hid :] *= r
        gh = dh_pre @ w_h.data + g * z if h.requires_grad else None
        if x.data.ndim == 1:
            gwx, gb = np.outer(da, x.data), da
            gwh = None if zero_h else np.outer(dh_pre, h.data)
        else:
            gwx, gb = da.T @ x.data, da.sum(axis=0)
            gwh = None if zero_h else dh_pre.T @ h.data
        return gx, gh, gwx, gwh, gb

    return _result(out, (x, h, w_x, w_h, bias), backward)


# parameters and optimisation ----------------------------------------------------


class ParameterSet:
    """Named parameter tensors, each paired with a gradient accumulator."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self._params.items()}

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0.0

    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy(self) -> ParameterSet:
        out = ParameterSet()
        for k, t in self._params.items():
            out.add(k, t.data.copy())
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            raise ConfigurationError("parameter names do not match")
        for k, v in values.items():
            if self._params[k].shape != np.shape(v):
                raise ConfigurationError(f"shape mismatch for {k!r}")
            self._params[k].data[...] = v

    def merged(self, other: ParameterSet, prefix: str) -> ParameterSet:
        """A view holding this set's tensors plus ``other``'s under ``prefix``."""
        out = ParameterSet()
        out._params.update(self._params)
        for k, t in other._params.items():
            out._params[f"{prefix}{k}"] = t
        return out


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class RmspropState:
    square_avg: dict[str, np.ndarray]
    alpha: float = 0.99
    eps: float = 1e-5
    lr: float = 5e-4

    @classmethod
    def for_params(cls, params: ParameterSet, **kwargs) -> RmspropState:
        return cls({k: np.zeros_like(v) for k, v in params.values().items()}, **kwargs)


def rmsprop_update(params: ParameterSet, state: RmspropState) -> None:
    """One RMSprop step, then zero the gradients."""
    alpha, lr, eps = state.alpha, state.lr, state.eps
    for name, t in params.items():
        g = t.grad
        s = state.square_avg[name]
        s *= alpha
        step = np.multiply(g, g)
        step *= 1.0 - alpha
        s += step
        np.sqrt(s, out=step)
        step += eps
        np.divide(g, step, out=step)
        step *= lr
        t.data -= step
    params.zero_grad()


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; return the original norm."""
    total = float(np.sqrt(sum(float(np.vdot(t.grad, t.grad)) for _, t in params.items())))
    if total > max_norm:
        scale = max_norm / total
        for _, t in params.items():
            t.grad *= scale
    return total


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def grad_check(
    f: Callable[[ParameterSet], Tensor],
    params: ParameterSet,
    step: float = 1e-5,
    tol: float | None = None,
    entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``entries`` limits the comparison to that many randomly chosen parameter
    entries (drawn with ``rng``); by default every entry is checked. When
    ``tol`` is given and exceeded, ``AssertionError`` is raised.
    """
    params.zero_grad()
    loss = f(params)
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("grad_check: function value is not finite")
    loss.backward()
    analytic = {k: g.copy() for k, g in params.grads().items()}
    params.zero_grad()

    coords = [(k, i) for k, t in params.items() for i in range(t.data.size)]
    if entries is not None and entries < len(coords):
        rng = rng or np.random.default_rng(0)
        coords = [coords[j] for j in rng.choice(len(coords), size=entries, replace=False)]

    worst = 0.0
    with no_grad():
        for name, i in coords:
            flat = params[name].data.reshape(-1)
            original = flat[i]
            flat[i] = original + step
            up = f(params).item()
            flat[i] = original - step
            down = f(params).item()
            flat[i] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"grad_check: non-finite value perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * step)
            err = float(relative_error(analytic[name].reshape(-1)[i], numeric))
            worst = max(worst, err)
    if tol is not None and worst > tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}")
    return worst
