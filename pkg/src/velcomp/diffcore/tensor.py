"""Reverse-mode differentiation over dense 2-D float64 matrices.

Operations record themselves on the innermost active :class:`Tape`.  Outside
a tape, operations only compute values, which keeps inference cheap.

    with Tape() as tape:
        loss = mse(matmul(x, w), y)
    grads = tape.gradient(loss, [w])
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    pass


class Tensor:
    """A 2-D float64 matrix, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all defined in terms of the primitives below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive applications.

    Recorded nodes are appended in execution order, which is a valid
    topological order; :meth:`gradient` walks it in reverse exactly once.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of the scalar ``target`` with respect to ``sources``.

        Sources that do not influence the target get zero gradients.
        """
        if target.data.size != 1:
            raise ShapeError(f"gradient target must be 1x1, got {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            # sources may themselves be recorded nodes; keep their gradient
            if node.requires_grad:
                grads[id(node)] = g
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent._tracked:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(out_data)
    if _TAPES and any(p._tracked for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out._tracked = True
        _TAPES[-1].nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ----------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * out / bd, b.shape))
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ----------------------------------------------------------------------------
# structural


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    other = 1 - axis
    if len({t.shape[other] for t in ts}) != 1:
        raise ShapeError(f"concat along axis {axis}: mismatched shapes {[t.shape for t in ts]}")
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        if axis == 1:
            return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(ts)))
        return tuple(g[bounds[i] : bounds[i + 1], :] for i in range(len(ts)))

    return _record(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for shape {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _record(a.data[:, start:stop], (a,), backward)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for shape {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _record(a.data[start:stop], (a,), backward)


def block_apply(matrix: np.ndarray, a) -> Tensor:
    """Left-multiply every consecutive block of rows by a fixed matrix.

    ``a`` holds ``B`` blocks of ``n`` rows; ``matrix`` is ``(m, n)``.  The
    output holds ``B`` blocks of ``m`` rows.  Gathers, broadcasts and
    segment means over fixed-size groups are all instances of this.
    """
    a = as_tensor(a)
    m, n = matrix.shape
    rows, cols = a.shape
    if rows % n:
        raise ShapeError(f"block_apply: {rows} rows is not a multiple of block size {n}")
    nb = rows // n
    blocks = a.data.reshape(nb, n, cols)
    out = (matrix @ blocks).reshape(nb * m, cols)
    mt = matrix.T

    def backward(g):
        return ((mt @ g.reshape(nb, m, cols)).reshape(rows, cols),)

    return _record(out, (a,), backward)


def group_mean(a, size: int) -> Tensor:
    """Mean over consecutive groups of ``size`` rows."""
    a = as_tensor(a)
    rows, cols = a.shape
    if rows % size:
        raise ShapeError(f"group_mean: {rows} rows is not a multiple of {size}")
    out = a.data.reshape(rows // size, size, cols).mean(axis=1)

    def backward(g):
        return (np.repeat(g / size, size, axis=0),)

    return _record(out, (a,), backward)


def repeat_rows(a, times: int) -> Tensor:
    """Repeat each row ``times`` times consecutively."""
    a = as_tensor(a)
    rows, cols = a.shape

    def backward(g):
        return (g.reshape(rows, times, cols).sum(axis=1),)

    return _record(np.repeat(a.data, times, axis=0), (a,), backward)


def reshape(a, shape: tuple[int, int]) -> Tensor:
    a = as_tensor(a)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# ----------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.array([[a.data.sum()]]), (a,), lambda g: (np.full_like(a.data, g[0, 0]),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _record(np.array([[a.data.mean()]]), (a,), lambda g: (np.full_like(a.data, g[0, 0] / n),))


def row_sum(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mse(pred, target) -> Tensor:
    """Mean of squared differences over all entries."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = g[0, 0] * 2.0 * diff / n
        return (gp, -gp)

    return _record(np.array([[np.mean(diff * diff)]]), (pred, target), backward)


# ----------------------------------------------------------------------------
# elementwise nonlinearities


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # e = exp(min(x, 0)) equals 1 for x > 0, so with alpha = 1 it is also the
    # derivative; np.where is avoided because it dominates on large edge tensors
    e = np.minimum(x, 0.0)
    np.exp(e, out=e)
    out = np.maximum(x, 0.0)
    if alpha == 1.0:
        out += e
        out -= 1.0
        dx = e
    else:
        out += alpha * (e - 1.0)
        dx = alpha * e + (1.0 - alpha) * (x > 0)
    return _record(out, (a,), lambda g: (g * dx,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = _sigmoid(x)
    return _record(out, (a,), lambda g: (g * sig,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record(x * x, (a,), lambda g: (2.0 * g * x,))


def dropout(a, p: float, rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or outside training."""
    a = as_tensor(a)
    if p <= 0.0 or not training:
        return a
    if not p < 1.0:
        raise ValueError(f"dropout probability must be < 1, got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _record(a.data * keep, (a,), lambda g: (g * keep,))


class BatchNormState:
    """Running statistics for :func:`batchnorm`."""

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros((1, width))
        self.running_var = np.ones((1, width))
        self.momentum = momentum
        self.eps = eps


def batchnorm(a, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Per-column batch normalization with a learned affine map.

    Training mode normalizes with batch statistics and updates the running
    averages (unbiased variance, as is customary); eval mode is the fixed
    affine map defined by the frozen statistics.
    """
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    if gamma.shape != (1, x.shape[1]) or beta.shape != (1, x.shape[1]):
        raise ShapeError(f"batchnorm: input {a.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if not training:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - state.running_mean) * inv
        gd = gamma.data

        def backward_eval(g):
            return (g * gd * inv, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True))

        return _record(xhat * gd + beta.data, (a, gamma, beta), backward_eval)

    n = x.shape[0]
    if n < 2:
        raise ShapeError("batchnorm in training mode needs a batch of at least 2 rows")
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = xc * inv
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)
    gd = gamma.data

    def backward(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=0, keepdims=True) - xhat * (gx * xhat).mean(axis=0, keepdims=True))
        return (dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True))

    return _record(xhat * gd + beta.data, (a, gamma, beta), backward)


def no_tape() -> bool:
    return not _TAPES


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
