import numpy as np
import pytest

from dygad import _kernels as K


def seg_structure(rng, n_seg, max_len=6, allow_empty=False):
    lo = 0 if allow_empty else 1
    sizes = rng.integers(lo, max_len + 1, n_seg)
    indptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    return indptr, int(indptr[-1])


@pytest.mark.parametrize("allow_empty", [False, True])
def test_segment_sum_rows_paths_agree(allow_empty):
    rng = np.random.default_rng(0)
    for _ in range(20):
        indptr, total = seg_structure(rng, 8, allow_empty=allow_empty)
        x = rng.normal(size=(total, 5))
        a = K.segment_sum_rows(x, indptr, 8)
        b = K.segment_sum_rows_np(x, indptr, 8)
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_segment_softmax_paths_agree():
    rng = np.random.default_rng(1)
    for _ in range(20):
        indptr, total = seg_structure(rng, 10)
        logits = rng.normal(size=total) * 5
        a = K.segment_softmax_fwd(logits, indptr)
        b = K.segment_softmax_fwd_np(logits, indptr)
        np.testing.assert_allclose(a, b, atol=1e-14)
        g = rng.normal(size=total)
        np.testing.assert_allclose(K.segment_softmax_bwd(a, g, indptr),
                                   K.segment_softmax_bwd_np(a, g, indptr),
                                   atol=1e-14)


def test_segment_softmax_segments_sum_to_one():
    rng = np.random.default_rng(2)
    indptr, total = seg_structure(rng, 12)
    p = K.segment_softmax_fwd(rng.normal(size=total) * 10, indptr)
    for s in range(12):
        assert abs(p[indptr[s]:indptr[s + 1]].sum() - 1.0) <= 1e-12


def test_scatter_add_rows_paths_agree():
    rng = np.random.default_rng(3)
    for _ in range(20):
        idx = rng.integers(0, 7, 30).astype(np.int64)
        src = rng.normal(size=(30, 4))
        a = np.zeros((7, 4))
        b = np.zeros((7, 4))
        K.scatter_add_rows(a, idx, src)
        K.scatter_add_rows_np(b, idx, src)
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_numpy_fallback_forced_by_env(tmp_path):
    import subprocess
    import sys
    code = (
        "import os; os.environ['DYGAD_NUMBA']='0';"
        "from dygad import _kernels as K;"
        "assert not K.USING_NUMBA;"
        "assert K.segment_sum_rows is K.segment_sum_rows_np;"
        "print('fallback-ok')"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True)
    assert out.returncode == 0, out.stderr
    assert "fallback-ok" in out.stdout
