import numpy as np
import pytest

from ncres import _kernels as kn


def _random_table(rng, n, count, support, batch=1):
    keys = rng.integers(-support, support + 1, size=(count, n)).astype(np.int64)
    keys = np.unique(keys, axis=0)
    vals = rng.standard_normal((batch, len(keys))) + 1j * rng.standard_normal((batch, len(keys)))
    return keys, vals


def _theta(rng, n):
    A = rng.standard_normal((n, n))
    return A - A.T


@pytest.mark.skipif(not kn.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("n", [1, 2, 3])
def test_twisted_backends_agree(rng, n):
    theta = _theta(rng, n)
    ka, va = _random_table(rng, n, 12, 3, batch=2)
    kb, vb = _random_table(rng, n, 9, 2)
    lo, hi = kn.output_box(ka, kb, np.full(n, -4), np.full(n, 4))
    o1, t1 = kn.twisted_numba(ka, va, kb, vb, theta, lo, hi)
    o2, t2 = kn.twisted_numpy(ka, va, kb, vb, theta, lo, hi)
    assert np.array_equal(t1, t2)
    assert np.abs(o1 - o2).max() < 1e-12


@pytest.mark.skipif(not kn.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("n", [1, 2])
def test_multiplier_entries_backends_agree(rng, n):
    theta = _theta(rng, n)
    K = 5
    keys = rng.integers(-2, 3, size=(6, 2 * n)).astype(np.int64)
    ax = np.arange(-K, K + 1)
    cols = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n).astype(np.int64)
    vals = rng.standard_normal((1, 6)) + 0j
    e1 = kn.mult_entries_numba(keys, vals, cols, theta, K)
    e2 = kn.mult_entries_numpy(keys, vals, cols, theta, K)
    D = len(cols)

    def dense(r, c, d):
        M = np.zeros((D, D), complex)
        np.add.at(M, (r, c), d)
        return M
    assert np.abs(dense(*e1) - dense(*e2)).max() < 1e-12


@pytest.mark.skipif(not kn.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("n,z", [(1, 1.3), (2, 1.7), (2, 0.6 + 0.4j), (3, 2.2)])
def test_lattice_power_backends_agree(n, z):
    a = kn.lattice_power_numba(12, n, z)
    b = kn.lattice_power_numpy(12, n, z)
    assert abs(a - b) < 1e-11 * abs(b)


def test_lattice_gauss_sum_separable():
    t = np.array([0.1, 0.5])
    ax = np.arange(-6, 7)
    r2 = ax[:, None] ** 2 + ax[None, :] ** 2
    ref = [np.exp(-s * r2).sum() for s in t]
    assert np.allclose(kn.lattice_gauss_sum(6, 2, t), ref, rtol=1e-14)
