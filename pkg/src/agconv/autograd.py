"""Minimal dense tensor engine with tape-based reverse-mode differentiation.

Only the operations needed by the graph convolution layers are provided.
Operations record themselves on the active :class:`Tape` when at least one
input requires a gradient; outside a tape they run as plain numpy code.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

from .exceptions import ContractError, DimensionError, NumericError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "agconv_active_tape", default=None
)


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the contents."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def backward(self, tape: "Tape | None" = None):
        return backward(self, tape)


class Parameter(Tensor):
    """Trainable tensor carrying its own momentum buffer."""

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.momentum = np.zeros_like(self.data)


class _Record:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; every differentiable operation executed inside
    the ``with`` block is appended. Tapes are context-local, so concurrent
    threads each need their own.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.records.append(_Record(tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ContractError(f"slope must lie in [0, 1), got {slope}")
    x = as_tensor(x)
    factor = np.where(x.data >= 0.0, 1.0, slope)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim == 0 or x.shape[axis] < 1:
        raise DimensionError(f"softmax needs a non-empty axis, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    # summing in sorted order makes the result independent of element order
    y = e / np.sort(e, axis=axis).sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), back)


def softmax_lastdim(x: Tensor) -> Tensor:
    return softmax(x, axis=-1)


# ------------------------------------------------------------ linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b``.

    ``b`` must be 2-D. ``a`` may carry leading batch axes, in which case the
    product is applied to its trailing matrix rows (a shared linear map).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(ad @ bd, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def edge_matvec(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-row vector-matrix product: ``x[..., c] @ kernel[..., c, m]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.data.ndim != x.data.ndim + 1 or kernel.shape[:-1] != x.shape:
        raise DimensionError(f"edge_matvec shape mismatch: {x.shape} x {kernel.shape}")
    xd, kd = x.data, kernel.data

    def back(g):
        gx = np.einsum("...m,...cm->...c", g, kd) if x.requires_grad else None
        gk = xd[..., :, None] * g[..., None, :] if kernel.requires_grad else None
        return gx, gk

    return _make(np.einsum("...c,...cm->...m", xd, kd), (x, kernel), back)


# --------------------------------------------------------------- reductions


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out), (x,), back)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(reduce_sum(x, axis), 1.0 / n)


def reduce_max(x: Tensor, axis: int) -> tuple[Tensor, np.ndarray]:
    """Maximum along ``axis`` plus the (lowest-index) argmax.

    The backward pass routes each output gradient entirely to its argmax.
    """
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ContractError("empty neighborhood: cannot take a max over zero rows")
    out = x.data.max(axis=axis)
    # first position equal to the max, i.e. the lowest-index argmax
    arg = np.argmax(x.data == np.expand_dims(out, axis), axis=axis)
    arg_k = np.expand_dims(arg, axis)
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, arg_k, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), back), arg


def reduce_max_rows(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """Channel-wise maximum over the rows of a ``k x M`` matrix."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"reduce_max_rows expects k x M, got shape {x.shape}")
    return reduce_max(x, axis=0)


# ----------------------------------------------------------- shape handling


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    nd = len(ref)
    ax = axis % nd if nd else 0
    for t in tensors[1:]:
        if len(t.shape) != nd or any(t.shape[i] != ref[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat leading-shape mismatch: {ref} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, back)


def concat_lastdim(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat leading-shape mismatch: {a.shape} vs {b.shape}")
    return concat([a, b], axis=-1)


def index(x: Tensor, idx) -> Tensor:
    """Basic (slice) indexing."""
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        gx[idx] = g
        return (gx,)

    return _make(np.array(x.data[idx]), (x,), back)


def _scatter_matrix(idx: np.ndarray, weights: np.ndarray, n: int):
    """Sparse ``n x len(idx)`` matrix summing weighted rows into their targets."""
    return sparse.csc_matrix((weights, idx, np.arange(idx.size + 1)), shape=(n, idx.size))


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[idx]`` along the first axis; repeated indices accumulate gradient."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    n = x.shape[0]
    feat = x.shape[1:]

    def back(g):
        flat = g.reshape(idx.size, -1)
        gx = _scatter_matrix(idx.reshape(-1), np.ones(idx.size), n) @ flat
        return (gx.reshape((n,) + feat),)

    return _make(x.data[idx], (x,), back)


def weighted_gather(x: Tensor, idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """Row-wise weighted sum ``out[i] = sum_j weights[i, j] * x[idx[i, j]]``.

    Only ``x`` is differentiated; ``weights`` are treated as constants.
    """
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    w = np.asarray(weights, dtype=np.float64)
    n = x.shape[0]

    def back(g):
        per_edge = np.repeat(g, idx.shape[1], axis=0)
        return (_scatter_matrix(idx.reshape(-1), w.reshape(-1), n) @ per_edge,)

    return _make(np.einsum("ij,ijf->if", w, x.data[idx]), (x,), back)


# ------------------------------------------------------------ normalization


def affine_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-feature standardization over the point axis, then scale and shift.

    ``x`` is ``N x F``; statistics are taken over the N rows of one cloud.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    n = xd.shape[0]
    mu = xd.mean(axis=0)
    centered = xd - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=0) + eps)
    xhat = centered * inv
    gd = gamma.data

    def back(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gd
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, dgamma, dbeta

    return _make(xhat * gd + beta.data, (x, gamma, beta), back)


# ----------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over rows.

    ``logits`` is ``C`` (single sample) or ``B x C``.
    """
    logits = as_tensor(logits)
    z = logits.data
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    lab = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if lab.shape[0] != z2.shape[0]:
        raise DimensionError(f"{lab.shape[0]} labels for {z2.shape[0]} logit rows")
    if lab.size and (lab.min() < 0 or lab.max() >= z2.shape[1]):
        raise ContractError("label out of range of the class count")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z2.shape[0])
    loss = float(np.mean(logsum - shifted[rows, lab]))
    probs = np.exp(shifted - logsum[:, None])

    def back(g):
        d = probs.copy()
        d[rows, lab] -= 1.0
        d *= float(g) / z2.shape[0]
        return (d[0] if single else d,)

    return _make(np.asarray(loss), (logits,), back)


# ----------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape | None = None, accumulate: bool = True) -> dict:
    """Reverse-accumulate gradients of a scalar ``loss``.

    Returns a mapping from each reachable leaf tensor to its gradient. With
    ``accumulate`` the gradients are also added into each leaf's ``grad``.
    A loss that does not depend on any parameter yields an empty mapping.
    """
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = tape if tape is not None else _ACTIVE_TAPE.get()
    if tape is None:
        raise ContractError("loss requires grad but no tape was given or active")

    produced = {id(r.output) for r in tape.records}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi

    out = {}
    for key, leaf in leaves.items():
        g = grads[key].reshape(leaf.shape)
        out[leaf] = g
        if accumulate:
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return out


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients with central differences.

    ``f`` is a deterministic closure evaluating the scalar loss from the
    current parameter values. Returns ``max |a - n| / max(1, |a|, |n|)`` over
    the checked entries. ``max_entries`` caps the entries probed per parameter
    (chosen with a seeded generator); ``None`` checks all of them.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params = list(params)
    with Tape() as tape:
        loss = f()
    analytic = backward(loss, tape, accumulate=False)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        a_grad = analytic.get(p)
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            ana = 0.0 if a_grad is None else float(a_grad.reshape(-1)[i])
            if not (np.isfinite(num) and np.isfinite(ana)):
                raise NumericError(f"non-finite gradient at entry {i} of {p.name or p.shape}")
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana), abs(num)))
    return worst
