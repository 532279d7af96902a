import numpy as np
import pytest

from ncres.acceptance import flat_laplacian, random_classical, random_differential, random_element
from ncres.errors import InputError, MissingComponentError
from ncres.nc_algebra import MultiplierCoefficient, NCElement, ThetaMatrix, derive
from ncres.spectral_oracle import operator_matrix
from ncres.symbol_calculus import (EvalContext, add, coef, compose,
                                   degree, diff_xi, evaluate, evaluate_expr, from_differential,
                                   identity_symbol, inverse, is_zero, lam, mul, neg, norm2_expr, xi)


def mc_diff(a, b):
    return np.abs((a - b).vals).max(initial=0.0)


def ev(e, T, x, l=None):
    return evaluate_expr(e, T, np.asarray(x, float), l, EvalContext(T))


def test_from_differential_laplacian(theta2):
    D = flat_laplacian(theta2)
    assert D.order == 2 and D.exact and D.is_differential()
    assert abs(ev(D.component(0), theta2, (3, 4)).identity_part()[0] - 25) < 1e-14
    assert is_zero(D.component(1)) and is_zero(D.component(2))
    I = identity_symbol(theta2)
    assert I.order == 0 and ev(I.component(0), theta2, (0.3, 0.1)).identity_part()[0] == 1


def test_evaluate_examples():
    T = ThetaMatrix.zero(2)
    r2 = norm2_expr(2)
    assert abs(evaluate(r2, (3, 4), theta=T).identity_part()[0] - 25) < 1e-13
    e = inverse(add(r2, neg(lam(2))))
    assert abs(evaluate(e, (1, 0), -1.0, theta=T).identity_part()[0] - 0.5) < 1e-14
    with pytest.raises(InputError):
        evaluate(r2, (0, 0), theta=T)


def test_diff_xi_monomial():
    T = ThetaMatrix.zero(2)
    d = diff_xi(xi((2, 0)), 1)
    x = np.array([0.7, -1.3])
    assert abs(ev(d, T, x).identity_part()[0] - 2 * x[0]) < 1e-14
    assert degree(d) == 1


def test_diff_inverse_against_finite_differences(rng):
    T = ThetaMatrix.zero(2)
    e = inverse(add(norm2_expr(2), neg(lam(2))))
    h = 1e-6
    for _ in range(20):
        x = rng.standard_normal(2)
        l = -abs(rng.standard_normal()) + 1j * rng.standard_normal()
        for i in (1, 2):
            d = ev(diff_xi(e, i), T, x, l)
            b = ev(e, T, x, l).identity_part()[0]
            exact = -b * 2 * x[i - 1] * b
            assert abs(d.identity_part()[0] - exact) <= 1e-12 * abs(exact) + 1e-15
            s = np.zeros(2)
            s[i - 1] = h
            fd = (ev(e, T, x + s, l) - ev(e, T, x - s, l)).scale(1 / (2 * h))
            assert mc_diff(d, fd) <= 1e-6 * abs(exact)


def test_homogeneity(rng, theta2):
    A = random_classical(rng, theta2, 0, 3, 1)
    for j in range(3):
        e = A.component(j)
        d = A.degree_of(j)
        assert degree(e) == d
        x = rng.standard_normal(2)
        t = 1.7
        lhs = ev(e, theta2, t * x)
        rhs = ev(e, theta2, x).scale(t ** d)
        assert mc_diff(lhs, rhs) <= 1e-10 * max(1.0, np.abs(rhs.vals).max())
        g = diff_xi(e, 1)
        assert degree(g) == d - 1
    lam_e = inverse(add(mul(norm2_expr(2), coef(MultiplierCoefficient.right(
        NCElement.from_dict(theta2, {(0, 0): 1.0, (1, 0): 0.2, (-1, 0): 0.2})))), neg(lam(2))))
    x = np.array([0.4, -0.9])
    t = 2.3
    lhs = ev(lam_e, theta2, t * x, -0.7 * t ** 2)
    rhs = ev(lam_e, theta2, x, -0.7).scale(t ** -2)
    assert mc_diff(lhs, rhs) <= 1e-10


def test_compose_identity_and_flat(theta2, rng):
    A = random_differential(rng, theta2)
    C = compose(A, identity_symbol(theta2))
    x = rng.standard_normal(2)
    for j in range(A.depth()):
        assert mc_diff(ev(C.component(j), theta2, x), ev(A.component(j), theta2, x)) < 1e-13
    D = flat_laplacian(theta2)
    D2 = compose(D, D)
    assert D2.order == 4
    assert abs(ev(D2.component(0), theta2, x).identity_part()[0] - (x @ x) ** 2) < 1e-12
    for j in range(1, D2.depth()):
        assert mc_diff(ev(D2.component(j), theta2, x), MultiplierCoefficient.zero(theta2)) == 0


def test_commutator_realises_derivation(theta2, rng):
    a = random_element(rng, theta2, 2, 4)
    X = from_differential(theta2, [((1, 0), 1.0)])
    L = from_differential(theta2, [((0, 0), a)])
    comm = compose(X, L) - compose(L, X)
    x = rng.standard_normal(2)
    assert mc_diff(ev(comm.component(0), theta2, x), MultiplierCoefficient.zero(theta2)) < 1e-13
    lower = ev(comm.component(1), theta2, x)
    assert mc_diff(lower, MultiplierCoefficient.left(derive(a, 1))) < 1e-13
    K = 8
    M = operator_matrix(comm, K).dense()
    ref = operator_matrix(from_differential(theta2, [((0, 0), derive(a, 1))]), K).dense()
    pts = operator_matrix(X, K).points
    inner = np.abs(pts).max(axis=1) <= K - 2
    assert np.abs(M[:, inner] - ref[:, inner]).max() < 1e-12


def test_leading_symbol_multiplicative(theta2, rng):
    A = random_differential(rng, theta2, 2)
    B = random_differential(rng, theta2, 1)
    C = compose(A, B)
    x = rng.standard_normal(2)
    lead = ev(A.component(0), theta2, x).compose(ev(B.component(0), theta2, x))
    assert mc_diff(ev(C.component(0), theta2, x), lead) < 1e-12


def test_missing_component_named(theta2, rng):
    A = random_classical(rng, theta2, -1, 1, 1)
    with pytest.raises(MissingComponentError, match="depth 2"):
        A.component(1)
    with pytest.raises(MissingComponentError):
        compose(A, A, 3)
