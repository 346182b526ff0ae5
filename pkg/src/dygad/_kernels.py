"""Hot inner kernels: numba-jitted loops with pure-numpy fallbacks.

The ragged per-node reductions inside attention (segment softmax, segment
row sums) and the scatter-add behind gather gradients dominate training
time. Set ``DYGAD_NUMBA=0`` to force the numpy path; the default uses
numba when it imports. ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

import numpy as np

_env = os.environ.get("DYGAD_NUMBA", "1").strip().lower()
_want_numba = _env not in ("0", "false", "no", "off")

if _want_numba:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _want_numba = False

USING_NUMBA = _want_numba


# ---------------------------------------------------------------------------
# numpy reference implementations

def scatter_add_rows_np(out, idx, src):
    """out[idx[k], :] += src[k, :] with repeated indices accumulated."""
    np.add.at(out, idx, src)


def segment_sum_rows_np(x, indptr, n_seg):
    counts = np.diff(indptr)
    out = np.zeros((n_seg, x.shape[1]), dtype=x.dtype)
    if len(counts) and counts.min() > 0:
        np.add.reduceat(x, indptr[:-1], axis=0, out=out)
    else:
        for s in range(n_seg):
            lo, hi = indptr[s], indptr[s + 1]
            if hi > lo:
                out[s] = x[lo:hi].sum(axis=0)
    return out


def segment_softmax_fwd_np(logits, indptr):
    n_seg = len(indptr) - 1
    out = np.empty_like(logits)
    counts = np.diff(indptr)
    if len(counts) and counts.min() > 0:
        seg_max = np.maximum.reduceat(logits, indptr[:-1])
        e = np.exp(logits - np.repeat(seg_max, counts))
        seg_sum = np.add.reduceat(e, indptr[:-1])
        out = e / np.repeat(seg_sum, counts)
    else:
        for s in range(n_seg):
            lo, hi = indptr[s], indptr[s + 1]
            if hi > lo:
                e = np.exp(logits[lo:hi] - logits[lo:hi].max())
                out[lo:hi] = e / e.sum()
    return out


def segment_softmax_bwd_np(p, g, indptr):
    counts = np.diff(indptr)
    gp = g * p
    if len(counts) and counts.min() > 0:
        seg_dot = np.add.reduceat(gp, indptr[:-1])
        return p * (g - np.repeat(seg_dot, counts))
    out = np.empty_like(p)
    for s in range(len(indptr) - 1):
        lo, hi = indptr[s], indptr[s + 1]
        if hi > lo:
            out[lo:hi] = p[lo:hi] * (g[lo:hi] - gp[lo:hi].sum())
    return out


# ---------------------------------------------------------------------------
# numba implementations

if USING_NUMBA:

    @njit(cache=True)
    def _scatter_add_rows_nb(out, idx, src):
        for k in range(idx.shape[0]):
            i = idx[k]
            for c in range(src.shape[1]):
                out[i, c] += src[k, c]

    @njit(cache=True)
    def _segment_sum_rows_nb(x, indptr, out):
        for s in range(indptr.shape[0] - 1):
            for k in range(indptr[s], indptr[s + 1]):
                for c in range(x.shape[1]):
                    out[s, c] += x[k, c]

    @njit(cache=True)
    def _segment_softmax_fwd_nb(logits, indptr, out):
        for s in range(indptr.shape[0] - 1):
            lo, hi = indptr[s], indptr[s + 1]
            if hi <= lo:
                continue
            m = logits[lo]
            for k in range(lo + 1, hi):
                if logits[k] > m:
                    m = logits[k]
            z = 0.0
            for k in range(lo, hi):
                e = np.exp(logits[k] - m)
                out[k] = e
                z += e
            for k in range(lo, hi):
                out[k] /= z

    @njit(cache=True)
    def _segment_softmax_bwd_nb(p, g, indptr, out):
        for s in range(indptr.shape[0] - 1):
            lo, hi = indptr[s], indptr[s + 1]
            dot = 0.0
            for k in range(lo, hi):
                dot += g[k] * p[k]
            for k in range(lo, hi):
                out[k] = p[k] * (g[k] - dot)

    def scatter_add_rows(out, idx, src):
        _scatter_add_rows_nb(out, idx, src)

    def segment_sum_rows(x, indptr, n_seg):
        out = np.zeros((n_seg, x.shape[1]), dtype=x.dtype)
        _segment_sum_rows_nb(x, indptr, out)
        return out

    def segment_softmax_fwd(logits, indptr):
        out = np.empty_like(logits)
        _segment_softmax_fwd_nb(logits, indptr, out)
        return out

    def segment_softmax_bwd(p, g, indptr):
        out = np.empty_like(p)
        _segment_softmax_bwd_nb(p, g, indptr, out)
        return out

else:
    scatter_add_rows = scatter_add_rows_np
    segment_sum_rows = segment_sum_rows_np
    segment_softmax_fwd = segment_softmax_fwd_np
    segment_softmax_bwd = segment_softmax_bwd_np
