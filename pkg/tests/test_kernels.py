"""The compiled kernels must reproduce the numpy reference implementation."""

import numpy as np
import pytest

from sdepca import _kernels
from sdepca._kernels import _pykernels as py

ck = _kernels.compiled
needs_ext = pytest.mark.skipif(ck is None, reason="compiled extension not built")


def test_backend_name():
    assert _kernels.BACKEND in ("cython", "python")
    assert (_kernels.BACKEND == "cython") == (ck is not None)


@needs_ext
def test_counter_bits_identical():
    ids = np.arange(0, 2**40, 2**36, dtype=np.int64)
    idx = np.arange(0, 37, dtype=np.uint64)
    a = py.counter_uint64(2**63 + 5, ids[:, None], idx[None, :])
    b = np.asarray(ck.counter_uint64(2**63 + 5, ids[:, None], idx[None, :]))
    assert np.array_equal(a, b)


@needs_ext
@pytest.mark.parametrize("m_bm", [1, 3])
def test_normals_agree(m_bm):
    a = py.normals(17, np.arange(64), 3, 50, m_bm)
    b = np.asarray(ck.normals(17, np.arange(64), 3, 50, m_bm))
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def _random_linear(rng, d, m, scale=0.5):
    return (rng.normal(0, scale, (d, d)), rng.normal(0, scale, (m, d, d)),
            rng.normal(0, scale, (d, d)), rng.normal(0, scale, (m, d, d)))


@needs_ext
@pytest.mark.parametrize("delayed", [False, True])
@pytest.mark.parametrize("d,m", [(1, 1), (2, 1), (3, 2)])
def test_em_linear_agrees(delayed, d, m, rng):
    A, B, C, D = _random_linear(rng, d, m)
    x0 = rng.normal(size=(8, d))
    dW = 0.1 * rng.normal(size=(8, 60, m))
    s1, d1 = py.em_linear(A, B, C, D, x0, dW, 0.01, 7, delayed, 1e12)
    s2, d2 = ck.em_linear(A, B, C, D, x0, dW, 0.01, 7, delayed, 1e12)
    np.testing.assert_allclose(s1, np.asarray(s2), rtol=1e-13, atol=1e-14)
    assert np.array_equal(d1, np.asarray(d2))


@needs_ext
@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_moment_sums_agree(p, rng):
    A, B, C, D = _random_linear(rng, 2, 2)
    r1 = py.moment_sums(A, B, C, D, np.array([1.0, -0.5]), 0.05, 4, 40, True, p, 9, 100, 50, 1e12)
    r2 = ck.moment_sums(A, B, C, D, np.array([1.0, -0.5]), 0.05, 4, 40, True, p, 9, 100, 50, 1e12)
    np.testing.assert_allclose(r1[0], np.asarray(r2[0]), rtol=1e-12)
    np.testing.assert_allclose(r1[1], np.asarray(r2[1]), rtol=1e-12)
    assert np.array_equal(r1[2], np.asarray(r2[2]))


@pytest.mark.parametrize("impl", [py] + ([ck] if ck is not None else []))
def test_divergence_flagged(impl):
    A = np.array([[50.0]])
    Z = np.zeros((1, 1, 1))
    dW = np.zeros((3, 40, 1))
    states, div = impl.em_linear(A, Z, np.zeros((1, 1)), Z, np.ones((3, 1)), dW, 1.0, 1, False,
                                 1e12)
    states, div = np.asarray(states), np.asarray(div)
    # 51^n first exceeds 1e12 at n = 8
    assert np.all(div == 8)
    assert np.all(np.isnan(states[:, 8:])) and np.all(np.isfinite(states[:, :8]))


def test_fallback_selected_by_environment(tmp_path):
    import os
    import subprocess
    import sys

    code = ("import numpy as np; from sdepca import _kernels; "
            "from sdepca.model import GridSpec, make_scalar_linear; "
            "from sdepca.moments import estimate_pth_moment; "
            "s = estimate_pth_moment(make_scalar_linear(-1, .5, .2, .1), 'em-sdepca', [1.0], "
            "GridSpec(0.5, 5, 1.0), 2, 300, 4); "
            "np.save(r'%s', s.values); print(_kernels.BACKEND)")
    env = dict(os.environ, SDEPCA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code % (tmp_path / "py.npy")], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env.pop("SDEPCA_PURE_PYTHON")
    out = subprocess.run([sys.executable, "-c", code % (tmp_path / "active.npy")], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == _kernels.BACKEND
    np.testing.assert_allclose(np.load(tmp_path / "py.npy"), np.load(tmp_path / "active.npy"),
                               rtol=1e-12)
