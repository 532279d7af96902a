import math

import numpy as np
import pytest

from ncres.acceptance import flat_laplacian, standard_h
from ncres.errors import EllipticityError, InputError
from ncres.functional_calculus import (ContourSpec, compose_log_with, compose_with_log,
                                       log_symbol, power_symbol, resolve_contour,
                                       resolvent_components)
from ncres.heat_geometry import ConformalData, conformal_laplacian
from ncres.nc_algebra import ThetaMatrix
from ncres.symbol_calculus import (EvalContext, compose, evaluate_expr, from_differential,
                                   is_symbolic_zero, is_zero, scale_symbol)

IRR = 1 / math.sqrt(2)


def ev(e, T, x, l=None):
    return evaluate_expr(e, T, np.asarray(x, float), l, EvalContext(T))


def scalar(e, T, x, l=None):
    return ev(e, T, x, l).identity_part()[0]


def mc_diff(a, b):
    return np.abs((a - b).vals).max(initial=0.0)


def shifted_laplacian(T, c):
    return from_differential(T, [((2, 0), 1.0), ((0, 2), 1.0), ((0, 0), c)])


def conformal(theta12=IRR):
    T = ThetaMatrix.two(theta12)
    return T, conformal_laplacian(ConformalData(standard_h(T)))


def test_flat_resolvent(theta2):
    R = resolvent_components(flat_laplacian(theta2), 4)
    x, l = np.array([0.3, 1.1]), -0.4 + 0.3j
    assert abs(scalar(R.expr(0), theta2, x, l) - 1 / (x @ x - l)) < 1e-14
    assert all(is_zero(R.expr(j)) for j in range(1, 5))


def test_shifted_resolvent_matches_taylor():
    T = ThetaMatrix.zero(2)
    c = 0.7
    R = resolvent_components(shifted_laplacian(T, c), 4)
    x, l = np.array([1.2, -0.5]), -0.3 + 0.8j
    b0 = 1 / (x @ x - l)
    assert is_zero(R.expr(1)) and is_zero(R.expr(3))
    assert abs(scalar(R.expr(2), T, x, l) + c * b0 ** 2) < 1e-14
    assert abs(scalar(R.expr(4), T, x, l) - c ** 2 * b0 ** 3) < 1e-14


def test_parametrix_residual_vanishes():
    T, Q = conformal()
    R = resolvent_components(Q, 4)
    res = R.parametrix_residual()
    assert all(is_symbolic_zero(c) for c in res)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.standard_normal(2)
        l = -abs(rng.standard_normal()) + 1j * rng.standard_normal()
        for c in res:
            assert np.abs(ev(c, T, x, l).vals).max(initial=0) < 1e-13


def test_power_one_reproduces_symbol():
    T, Q = conformal()
    P = power_symbol(Q, 1, 4)
    for x in ([1.0, 0.0], [0.6, -0.8], [-0.3, 0.2]):
        for j in range(3):
            assert mc_diff(ev(P.component(j), T, x), ev(Q.component(j), T, x)) < 1e-8
        assert np.abs(ev(P.component(3), T, x).vals).max(initial=0) < 1e-8


def test_power_zero_is_identity():
    T = ThetaMatrix.zero(2)
    P = power_symbol(shifted_laplacian(T, 1.0), 0, 3)
    x = [0.8, 0.6]
    assert abs(scalar(P.component(0), T, x) - 1) < 1e-8
    for j in (1, 2):
        assert abs(scalar(P.component(j), T, x)) < 1e-8


@pytest.mark.parametrize("z", [-0.75, 0.5, -1.0 + 0.4j])
def test_power_binomial_expansion(z):
    T = ThetaMatrix.zero(2)
    P = power_symbol(shifted_laplacian(T, 1.0), z, 5)
    for x in ([1.0, 0.0], [1.5, -2.0]):
        r2 = float(np.dot(x, x))
        for j in range(5):
            ref = 0j if j % 2 else _binom(z, j // 2) * r2 ** (z - j // 2)
            got = scalar(P.component(j), T, x)
            assert abs(got - ref) <= 1e-7 * max(1.0, abs(ref))


def _binom(z, m):
    out = 1 + 0j
    for i in range(m):
        out *= (z - i) / (i + 1)
    return out


def test_flat_log():
    T = ThetaMatrix.zero(2)
    L = log_symbol(flat_laplacian(T), 4)
    for x in ([1.0, 0.0], [0.6, 0.8]):
        for j in range(4):
            assert abs(scalar(L.classical.component(j), T, x)) < 1e-8
    x = np.array([0.6, 0.8])
    t = 3.0
    diff = L.evaluate(t * x) - L.evaluate(x)
    assert abs(diff.identity_part()[0] - 2 * math.log(t)) < 1e-8


def test_log_of_square_is_twice_log():
    T, Q = conformal(0.0)
    Q2 = compose(Q, Q)
    L1 = log_symbol(Q, 3)
    L2 = log_symbol(Q2, 3)
    for x in ([1.0, 0.0], [0.6, -0.8]):
        for j in range(3):
            a = ev(L2.classical.component(j), T, x)
            b = ev(L1.classical.component(j), T, x).scale(2)
            assert mc_diff(a, b) < 1e-7


def test_group_law():
    T, Q = conformal()
    N = 3
    A = power_symbol(Q, -0.4, N)
    B = power_symbol(Q, -0.35, N)
    AB = compose(A, B, N)
    C = power_symbol(Q, -0.75, N)
    rng = np.random.default_rng(8)
    for _ in range(3):
        x = rng.standard_normal(2)
        x /= np.linalg.norm(x)
        for j in range(N):
            assert mc_diff(ev(AB.component(j), T, x), ev(C.component(j), T, x)) < 1e-6


def test_log_commutes_with_power():
    T, Q = conformal()
    N = 3
    L = log_symbol(Q, N)
    P = power_symbol(Q, -0.5, N)
    # both products carry the same log term q log|xi| sigma_P; compare the classical parts
    lp = compose_with_log(P, L, N)
    pl = compose_log_with(L, P, N)
    x = np.array([0.6, 0.8])
    comm = [mc_diff(ev(lp.component(j), T, x), ev(pl.component(j), T, x)) for j in range(N)]
    assert max(comm) < 1e-7


def test_contour_robustness():
    T, Q = conformal()
    x = [0.6, -0.8]
    base = power_symbol(Q, -0.6, 3)
    fine = power_symbol(Q, -0.6, 3, contour=ContourSpec(nodes=96))
    wide = power_symbol(Q, -0.6, 3, contour=ContourSpec(R=40.0))
    for j in range(3):
        a = ev(base.component(j), T, x)
        assert mc_diff(a, ev(fine.component(j), T, x)) < 1e-9
        assert mc_diff(a, ev(wide.component(j), T, x)) < 1e-8


def test_spectral_cut_errors():
    T = ThetaMatrix.zero(2)
    neg = scale_symbol(flat_laplacian(T), -1.0)
    with pytest.raises(EllipticityError):
        resolve_contour(neg)
    with pytest.raises(EllipticityError):
        resolve_contour(flat_laplacian(T), ContourSpec(eps=5.0))
    deg = from_differential(T, [((2, 0), 1.0)])
    with pytest.raises(EllipticityError):
        resolve_contour(deg)
    with pytest.raises(InputError):
        power_symbol(from_differential(T, [((0, 0), 1.0)]), 0.5, 1)
