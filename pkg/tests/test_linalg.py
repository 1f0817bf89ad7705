import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dextr import _fallback, kernels, linalg
from dextr.linalg import spectrum

from oracles import eigvals_bisection, gram_loops, singular_values_bisection

try:
    from dextr import _ext
except ImportError:
    _ext = None

shapes = st.tuples(st.integers(1, 6), st.integers(1, 8))


def test_gram_matches_loops():
    x = np.random.default_rng(0).standard_normal((4, 7))
    np.testing.assert_allclose(linalg.gram(x), gram_loops(x), atol=1e-12)


def test_bisection_oracle_sanity():
    a = np.diag([3.0, -1.0, 2.0])
    np.testing.assert_allclose(eigvals_bisection(a), [-1, 2, 3], atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_singular_values_match_bisection(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rng.integers(1, 7), rng.integers(1, 9)))
    np.testing.assert_allclose(spectrum(x).singular_values, singular_values_bisection(x), atol=1e-8)


def test_known_spectra():
    r = spectrum(np.diag([3.0, 4.0]))
    assert (r.sigma_max, r.sigma_min, r.inv_cond) == (4.0, 3.0, 0.75)
    z = spectrum(np.zeros((3, 5)))
    assert z.sigma_max == 0.0 and z.inv_cond == 0.0
    rank1 = np.outer([1.0, 2.0, 3.0], [1.0, -1.0, 0.5, 2.0])
    assert spectrum(rank1).inv_cond == 0.0
    eye = spectrum(np.eye(4))
    assert eye.inv_cond == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_inv_cond_scale_invariant(shape, seed, c):
    x = np.random.default_rng(seed).standard_normal(shape)
    assert spectrum(c * x).inv_cond == pytest.approx(spectrum(x).inv_cond, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1))
def test_transpose_and_energy(shape, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    a, b = spectrum(x), spectrum(x.T)
    np.testing.assert_allclose(a.singular_values, b.singular_values, atol=1e-10)
    # sum of squared singular values equals the Frobenius energy
    assert np.sum(a.singular_values ** 2) == pytest.approx(np.sum(x * x), rel=1e-10)
    assert 0.0 <= a.inv_cond <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_orthogonal_invariance(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, n + 2))
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    np.testing.assert_allclose(spectrum(q @ x).singular_values, spectrum(x).singular_values, atol=1e-10)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(linalg.NotSymmetricError):
        linalg.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(linalg.NotSymmetricError):
        linalg.sym_eig(np.ones((2, 3)))


def test_sym_eig_non_finite_raises():
    with pytest.raises(linalg.ConvergenceError):
        linalg.sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_sweep_cap_raises():
    g = linalg.gram(np.random.default_rng(0).standard_normal((6, 9)))
    with pytest.raises(linalg.ConvergenceError):
        linalg.sym_eig(g, max_sweeps=1)


def test_spectrum_input_validation():
    with pytest.raises(ValueError):
        spectrum(np.zeros(3))
    with pytest.raises(ValueError):
        spectrum(np.zeros((0, 3)))


# ---------------------------------------------------------------- backends


def test_fallback_matches_numpy():
    rng = np.random.default_rng(7)
    for n in (1, 2, 5, 9, 16):
        x = rng.standard_normal((n, n + 3))
        g = x @ x.T
        ev, sweeps = _fallback.jacobi_eigvalsh(g)
        assert sweeps >= 0
        np.testing.assert_allclose(np.sort(ev), np.linalg.eigvalsh(g), atol=1e-10 * max(1, np.abs(g).max()))


@pytest.mark.skipif(_ext is None, reason="compiled extension not built")
@pytest.mark.parametrize("n", [1, 2, 3, 8, 17, 32])
def test_compiled_matches_fallback(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal((n, 2 * n))
    g = np.ascontiguousarray(x @ x.T)
    ec, sc = _ext.jacobi_eigvalsh(g)
    ef, sf = _fallback.jacobi_eigvalsh(g)
    assert sc >= 0 and sf >= 0
    np.testing.assert_allclose(np.sort(ec), np.sort(ef), atol=1e-10 * np.abs(g).max())


@pytest.mark.skipif(_ext is None, reason="compiled extension not built")
def test_compiled_zero_and_cap():
    ev, sweeps = _ext.jacobi_eigvalsh(np.zeros((3, 3)))
    assert sweeps == 0 and not ev.any()
    g = linalg.gram(np.random.default_rng(1).standard_normal((6, 9)))
    assert _ext.jacobi_eigvalsh(np.ascontiguousarray(g), 1e-12, 1)[1] == -1


def test_backend_flag():
    assert kernels.BACKEND in ("python", "compiled")
    if _ext is not None and kernels.BACKEND == "compiled":
        assert kernels.jacobi_eigvalsh is _ext.jacobi_eigvalsh
