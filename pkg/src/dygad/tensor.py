"""Float64 tensors with reverse-mode differentiation and the Adam optimizer.

The tape is distributed over op results: every tensor produced while grad
recording is enabled keeps its parent tensors, a backward closure, and a
creation ordinal. :func:`backward` walks the tensors reachable from a scalar
root in reverse creation order, invoking each closure exactly once, and
accumulates ``grad += adjoint`` on every reachable tensor with
``requires_grad``. Calling :func:`backward` twice on the same graph therefore
doubles the accumulated gradients.

Shape violations raise :class:`ShapeError` naming the primitive and the
offending shapes. Leaf construction always rejects non-finite data, and the
primitives that can manufacture non-finite values from finite inputs
(``exp``, ``log``, ``log1mexp``, ``softmax_rows``, ``layer_norm``, cosines)
validate their outputs. Set ``DYGAD_PARANOID=1`` to extend the finiteness
check to every op result.

Backward closures receive ``(adjoint, accumulate)`` and must hand
``accumulate`` freshly allocated arrays only (never views of live data);
the engine takes ownership of them.
"""

from __future__ import annotations

import itertools
import math
import os
import zlib
from contextlib import contextmanager

import numpy as np

from . import _kernels

_PARANOID = os.environ.get("DYGAD_PARANOID", "0").strip().lower() in (
    "1", "true", "yes", "on",
)

_GRAD_ENABLED = [True]
_KINK_WATCH: list | None = None
_NEXT_ID = itertools.count()


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class MissingGradError(TensorError):
    pass


@contextmanager
def no_grad():
    """Disable tape recording inside the block (scoring / finite differences)."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


@contextmanager
def watch_kink_margins():
    """Collect |distance to nonsmooth point| for relu/clamp evaluations.

    Gradient checks use this to reject parameter draws that land within a
    finite-difference step of a kink, where central differences are invalid.
    """
    global _KINK_WATCH
    prev = _KINK_WATCH
    _KINK_WATCH = margins = []
    try:
        yield margins
    finally:
        _KINK_WATCH = prev


def _note_kink(values):
    if _KINK_WATCH is not None and values.size:
        _KINK_WATCH.append(float(np.min(np.abs(values))))


class Tensor:
    """Dense float64 array, optionally participating in the autodiff tape."""

    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_bwd", "_oid")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor: non-finite values in leaf data")
        self.data = arr
        self.requires_grad = requires_grad
        self._grad = None
        self._parents = ()
        self._bwd = None
        self._oid = next(_NEXT_ID)

    @classmethod
    def _result(cls, data, parents=(), bwd=None):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = bool(parents)
        out._grad = None
        out._parents = parents
        out._bwd = bwd
        out._oid = next(_NEXT_ID)
        if _PARANOID and not np.all(np.isfinite(data)):
            raise NonFiniteError("op result contains non-finite values")
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        if self._grad is None and self.requires_grad:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        if self._grad is not None:
            self._grad.fill(0.0)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _recording(*tensors) -> bool:
    return _GRAD_ENABLED[0] and any(t.requires_grad for t in tensors)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor.

    ``root`` must be scalar (one element). Each recorded op is replayed once,
    in reverse creation order.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.data.shape}")
    nodes = [root]
    seen = {id(root)}
    stack = [root]
    while stack:
        t = stack.pop()
        for p in t._parents:
            if id(p) not in seen:
                seen.add(id(p))
                nodes.append(p)
                stack.append(p)
    nodes.sort(key=lambda t: t._oid, reverse=True)

    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}

    def accumulate(t, delta):
        key = id(t)
        cur = adjoint.get(key)
        if cur is None:
            adjoint[key] = delta
        else:
            cur += delta

    for t in nodes:
        g = adjoint.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            if t._grad is None:
                t._grad = np.zeros_like(t.data)
            t._grad += g
        if t._bwd is not None:
            t._bwd(g, accumulate)


# ---------------------------------------------------------------------------
# primitives

def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values in result")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over matrix rows."""
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias and a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor._result(a.data + b.data)
    if _recording(a, b):
        def bwd(g, acc):
            acc(a, g.copy())
            acc(b, g.sum(axis=0) if bias else g.copy())
        out._parents, out._bwd, out.requires_grad = (a, b), bwd, True
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor._result(a.data - b.data)
    if _recording(a, b):
        def bwd(g, acc):
            acc(a, g.copy())
            acc(b, -g)
        out._parents, out._bwd, out.requires_grad = (a, b), bwd, True
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor._result(a.data * b.data)
    if _recording(a, b):
        def bwd(g, acc):
            acc(a, g * b.data)
            acc(b, g * a.data)
        out._parents, out._bwd, out.requires_grad = (a, b), bwd, True
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor._result(a.data * c)
    if _recording(a):
        def bwd(g, acc):
            acc(a, g * c)
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor._result(a.data + float(c))
    if _recording(a):
        def bwd(g, acc):
            acc(a, g.copy())
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.data.shape} @ {b.data.shape}")
    out = Tensor._result(a.data @ b.data)
    if _recording(a, b):
        def bwd(g, acc):
            acc(a, g @ b.data.T)
            acc(b, a.data.T @ g)
        out._parents, out._bwd, out.requires_grad = (a, b), bwd, True
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.data.shape}")
    out = Tensor._result(np.ascontiguousarray(a.data.T))
    if _recording(a):
        def bwd(g, acc):
            acc(a, np.ascontiguousarray(g.T))
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def concat_last(parts) -> Tensor:
    """Concatenate 1-D or row-aligned 2-D tensors along the last axis."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_last: no inputs")
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim or (ndim == 2 and p.data.shape[0] != parts[0].data.shape[0]):
            raise ShapeError(
                "concat_last: incompatible shapes "
                + " ".join(str(p.data.shape) for p in parts)
            )
    out = Tensor._result(np.concatenate([p.data for p in parts], axis=-1))
    if _recording(*parts):
        widths = [p.data.shape[-1] for p in parts]
        def bwd(g, acc):
            o = 0
            for p, w in zip(parts, widths):
                acc(p, np.ascontiguousarray(g[..., o:o + w]))
                o += w
        out._parents, out._bwd, out.requires_grad = tuple(parts), bwd, True
    return out


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= j0 <= j1 <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: [{j0}:{j1}] invalid for shape {a.data.shape}")
    out = Tensor._result(np.ascontiguousarray(a.data[:, j0:j1]))
    if _recording(a):
        def bwd(g, acc):
            da = np.zeros_like(a.data)
            da[:, j0:j1] = g
            acc(a, da)
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def relu(a: Tensor) -> Tensor:
    _note_kink(a.data)
    out = Tensor._result(np.maximum(a.data, 0.0))
    if _recording(a):
        mask = a.data > 0.0
        def bwd(g, acc):
            acc(a, g * mask)
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    _check_finite(y, "exp")
    out = Tensor._result(y)
    if _recording(a):
        def bwd(g, acc):
            acc(a, g * y)
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NonFiniteError("log: input must be strictly positive")
    out = Tensor._result(np.log(a.data))
    if _recording(a):
        def bwd(g, acc):
            acc(a, g / a.data)
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def log1mexp(r: Tensor) -> Tensor:
    """log(1 - exp(-r)) for r > 0, computed stably on both branches."""
    x = r.data
    if np.any(x <= 0.0):
        raise NonFiniteError("log1mexp: input must be strictly positive")
    y = np.where(x <= math.log(2.0), np.log(-np.expm1(-x)), np.log1p(-np.exp(-x)))
    _check_finite(y, "log1mexp")
    out = Tensor._result(y)
    if _recording(r):
        def bwd(g, acc):
            acc(r, g / np.expm1(x))
        out._parents, out._bwd, out.requires_grad = (r,), bwd, True
    return out


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only strictly inside."""
    y = a.data
    inside = np.ones(a.data.shape, dtype=bool)
    if lo is not None:
        _note_kink(a.data - lo)
        y = np.maximum(y, lo)
        inside &= a.data > lo
    if hi is not None:
        _note_kink(a.data - hi)
        y = np.minimum(y, hi)
        inside &= a.data < hi
    out = Tensor._result(np.ascontiguousarray(y))
    if _recording(a):
        def bwd(g, acc):
            acc(a, g * inside)
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._result(np.asarray(a.data.sum()))
    if _recording(a):
        def bwd(g, acc):
            acc(a, np.full_like(a.data, float(g)))
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ShapeError("mean_all: empty tensor")
    out = Tensor._result(np.asarray(a.data.mean()))
    if _recording(a):
        def bwd(g, acc):
            acc(a, np.full_like(a.data, float(g) / n))
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def sq_norm(a: Tensor) -> Tensor:
    """Squared L2 norm of all elements (scalar)."""
    out = Tensor._result(np.asarray(np.sum(a.data * a.data)))
    if _recording(a):
        def bwd(g, acc):
            acc(a, (2.0 * float(g)) * a.data)
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax with optional additive mask of 0 / -inf sentinels."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-D, got {a.data.shape}")
    logits = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != a.data.shape:
            raise ShapeError(
                f"softmax_rows: mask shape {mask.shape} vs input {a.data.shape}"
            )
        if not np.all((mask == 0.0) | np.isneginf(mask)):
            raise TensorError("softmax_rows: mask entries must be 0 or -inf")
        logits = logits + mask
    m = logits.max(axis=1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise TensorError("softmax_rows: fully masked row")
    e = np.exp(logits - m)
    p = e / e.sum(axis=1, keepdims=True)
    _check_finite(p, "softmax_rows")
    out = Tensor._result(p)
    if _recording(a):
        def bwd(g, acc):
            acc(a, p * (g - (g * p).sum(axis=1, keepdims=True)))
        out._parents, out._bwd, out.requires_grad = (a,), bwd, True
    return out


_LN_EPS = 1e-8


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row normalization followed by learnable scale and shift."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm: expected 2-D input, got {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape}"
            f" incompatible with input {x.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data + bias.data
    _check_finite(y, "layer_norm")
    out = Tensor._result(y)
    if _recording(x, gain, bias):
        def bwd(g, acc):
            gg = g * gain.data
            acc(x, inv * (gg - gg.mean(axis=1, keepdims=True)
                          - xhat * (gg * xhat).mean(axis=1, keepdims=True)))
            acc(gain, (g * xhat).sum(axis=0))
            acc(bias, g.sum(axis=0))
        out._parents, out._bwd, out.requires_grad = (x, gain, bias), bwd, True
    return out


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-D source, got {x.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError(
            f"gather_rows: index out of range for {x.data.shape[0]} rows"
        )
    out = Tensor._result(x.data[idx])
    if _recording(x):
        def bwd(g, acc):
            dx = np.zeros_like(x.data)
            _kernels.scatter_add_rows(dx, idx, np.ascontiguousarray(g))
            acc(x, dx)
        out._parents, out._bwd, out.requires_grad = (x,), bwd, True
    return out


def segment_sum_rows(x: Tensor, indptr: np.ndarray, seg_ids: np.ndarray) -> Tensor:
    """Sum rows of ``x`` grouped by contiguous segments (CSR ``indptr``)."""
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    n_seg = len(indptr) - 1
    if x.data.ndim != 2 or indptr[-1] != x.data.shape[0]:
        raise ShapeError(
            f"segment_sum_rows: input {x.data.shape} vs indptr end {indptr[-1]}"
        )
    out = Tensor._result(_kernels.segment_sum_rows(x.data, indptr, n_seg))
    if _recording(x):
        def bwd(g, acc):
            acc(x, np.ascontiguousarray(g[seg_ids]))
        out._parents, out._bwd, out.requires_grad = (x,), bwd, True
    return out


def segment_softmax(logits: Tensor, indptr: np.ndarray) -> Tensor:
    """Softmax over contiguous segments of a 1-D logit vector."""
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    if logits.data.ndim != 1 or indptr[-1] != logits.data.shape[0]:
        raise ShapeError(
            f"segment_softmax: logits {logits.data.shape} vs indptr end {indptr[-1]}"
        )
    p = _kernels.segment_softmax_fwd(logits.data, indptr)
    _check_finite(p, "segment_softmax")
    out = Tensor._result(p)
    if _recording(logits):
        def bwd(g, acc):
            acc(logits, _kernels.segment_softmax_bwd(p, np.ascontiguousarray(g), indptr))
        out._parents, out._bwd, out.requires_grad = (logits,), bwd, True
    return out


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row k of ``x`` by ``w[k]``."""
    if x.data.ndim != 2 or w.data.shape != (x.data.shape[0],):
        raise ShapeError(f"scale_rows: {x.data.shape} rows vs weights {w.data.shape}")
    out = Tensor._result(x.data * w.data[:, None])
    if _recording(x, w):
        def bwd(g, acc):
            acc(x, g * w.data[:, None])
            acc(w, (g * x.data).sum(axis=1))
        out._parents, out._bwd, out.requires_grad = (x, w), bwd, True
    return out


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"rowwise_dot: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor._result((a.data * b.data).sum(axis=1))
    if _recording(a, b):
        def bwd(g, acc):
            acc(a, g[:, None] * b.data)
            acc(b, g[:, None] * a.data)
        out._parents, out._bwd, out.requires_grad = (a, b), bwd, True
    return out


def rowwise_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity per row; rows where either norm is 0 yield 0."""
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(
            f"rowwise_cosine: shape mismatch {a.data.shape} vs {b.data.shape}"
        )
    na = np.sqrt((a.data * a.data).sum(axis=1))
    nb = np.sqrt((b.data * b.data).sum(axis=1))
    dot = (a.data * b.data).sum(axis=1)
    ok = (na > 0.0) & (nb > 0.0)
    denom = np.where(ok, na * nb, 1.0)
    cos = np.where(ok, dot / denom, 0.0)
    _check_finite(cos, "rowwise_cosine")
    out = Tensor._result(cos)
    if _recording(a, b):
        def bwd(g, acc):
            gm = np.where(ok, g, 0.0)
            na_s = np.where(ok, na, 1.0)
            nb_s = np.where(ok, nb, 1.0)
            coeff = (gm / (na_s * nb_s))[:, None]
            acc(a, coeff * b.data - (gm * cos / (na_s * na_s))[:, None] * a.data)
            acc(b, coeff * a.data - (gm * cos / (nb_s * nb_s))[:, None] * b.data)
        out._parents, out._bwd, out.requires_grad = (a, b), bwd, True
    return out


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors (scalar); 0 if either norm is 0."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cosine: shape mismatch {a.data.shape} vs {b.data.shape}")
    na = float(np.sqrt(np.sum(a.data * a.data)))
    nb = float(np.sqrt(np.sum(b.data * b.data)))
    ok = na > 0.0 and nb > 0.0
    c = float(np.sum(a.data * b.data) / (na * nb)) if ok else 0.0
    out = Tensor._result(np.asarray(c))
    if _recording(a, b):
        def bwd(g, acc):
            if not ok:
                acc(a, np.zeros_like(a.data))
                acc(b, np.zeros_like(b.data))
                return
            gs = float(g)
            acc(a, gs * (b.data / (na * nb) - c * a.data / (na * na)))
            acc(b, gs * (a.data / (na * nb) - c * b.data / (nb * nb)))
        out._parents, out._bwd, out.requires_grad = (a, b), bwd, True
    return out


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Bias-corrected Adam over a named parameter dict.

    ``step`` applies the update, zeroes every gradient buffer afterwards,
    and increments the shared step counter.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        for name, p in self.params.items():
            if p._grad is None:
                raise MissingGradError(f"adam: parameter '{name}' has no gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p._grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g.fill(0.0)


# ---------------------------------------------------------------------------
# parameter initialization and checkpoints

def glorot(shape, name: str, seed: int) -> Tensor:
    """Glorot-uniform weight matrix with a per-name deterministic stream."""
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def save_params(path, params: dict[str, Tensor]) -> None:
    """Write parameters to a .npz archive (one entry per name, float64 exact)."""
    arrays = {}
    for name, p in params.items():
        arrays[name] = p.data if isinstance(p, Tensor) else np.asarray(p)
    np.savez(path, **arrays)


def load_params(path) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as archive:
        return {name: archive[name].copy() for name in archive.files}
