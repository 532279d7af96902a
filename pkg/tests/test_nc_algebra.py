import cmath
import math

import numpy as np
import pytest

from ncres.acceptance import random_element
from ncres.errors import InputError, NCResError, SingularElementError
from ncres.nc_algebra import (MultiplierCoefficient, NCElement, ThetaMatrix, derive, dumps,
                              exp_element, invert, left_matrix, load, loads, mul, save, star,
                              trace_tau)


def close(a, b, tol=1e-12):
    return (a - b).norm1() <= tol


def selfadjoint(rng, theta, support=2):
    a = random_element(rng, theta, support, 4, 0.3)
    return (a + star(a)).scale(0.5)


def test_theta_is_antisymmetrised():
    T = ThetaMatrix([[0.0, 0.4], [0.2, 0.0]])
    assert np.allclose(T.entries, [[0, 0.1], [-0.1, 0]])
    with pytest.raises(InputError):
        ThetaMatrix([[0.0, 0.4], [0.2, 0.0]], strict=True)
    with pytest.raises(InputError):
        ThetaMatrix(np.zeros((5, 5)))
    assert ThetaMatrix.zero(3).is_zero


def test_commutative_mul_is_convolution(rng):
    T = ThetaMatrix.zero(2)
    a = random_element(rng, T)
    b = random_element(rng, T)
    ref = {}
    for k, x in a.to_dict().items():
        for l, y in b.to_dict().items():
            m = (k[0] + l[0], k[1] + l[1])
            ref[m] = ref.get(m, 0) + x * y
    assert close(mul(a, b), NCElement.from_dict(T, ref))
    assert close(mul(a, b), mul(b, a))


def test_commutation_phase():
    T = ThetaMatrix.two(0.3)
    u = NCElement.monomial(T, (1, 0))
    v = NCElement.monomial(T, (0, 1))
    uv = mul(u, v).coeff((1, 1))
    vu = mul(v, u).coeff((1, 1))
    assert abs(uv / vu - cmath.exp(-2j * math.pi * 0.3)) < 1e-14


def test_unit_law(rng, theta2):
    one = NCElement.unit(theta2)
    for _ in range(10):
        a = random_element(rng, theta2)
        assert close(mul(a, one), a, 0) and close(mul(one, a), a, 0)


def test_trace(rng, theta2):
    assert trace_tau(NCElement.monomial(theta2, (0, 0))) == 1
    assert trace_tau(NCElement.monomial(theta2, (1, -2))) == 0
    for _ in range(100):
        a = random_element(rng, theta2)
        b = random_element(rng, theta2)
        # same products a_k b_{-k}, summed in another order: rounding bound only
        bound = sum(abs(a.coeff(k) * b.coeff(tuple(-x for x in k))) for k in map(tuple, a.keys))
        assert abs(trace_tau(mul(a, b)) - trace_tau(mul(b, a))) <= 8 * np.finfo(float).eps * bound


def test_trace_is_mean_at_theta_zero(rng):
    T = ThetaMatrix.zero(2)
    a = random_element(rng, T)
    N = 16
    x = 2 * np.pi * np.arange(N) / N
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    f = sum(v * np.exp(1j * (k[0] * X1 + k[1] * X2)) for k, v in a.to_dict().items())
    assert abs(f.mean() - trace_tau(a)) < 1e-13


def test_derivations(rng, theta2):
    u = NCElement.monomial(theta2, (2, -1))
    assert close(derive(u, 1), u.scale(2), 0)
    assert close(derive(u, 2), u.scale(-1), 0)
    assert derive(NCElement.unit(theta2), 1).norm1() == 0
    for _ in range(10):
        a = random_element(rng, theta2)
        b = random_element(rng, theta2)
        for j in (1, 2):
            lhs = derive(mul(a, b), j)
            rhs = mul(derive(a, j), b) + mul(a, derive(b, j))
            assert close(lhs, rhs, 1e-12)
            assert trace_tau(derive(a, j)) == 0
    with pytest.raises(InputError):
        derive(u, 3)


def test_star(rng, theta2):
    u = NCElement.monomial(theta2, (1, 1))
    assert close(star(u), NCElement.monomial(theta2, (-1, -1)), 0)
    assert close(mul(star(u), u), NCElement.unit(theta2), 1e-15)
    for _ in range(10):
        a = random_element(rng, theta2)
        b = random_element(rng, theta2)
        assert star(star(a)) == a
        assert close(star(mul(a, b)), mul(star(b), star(a)), 1e-13)


def test_inner_product_against_matrix(rng, theta2):
    a, b, c = (random_element(rng, theta2) for _ in range(3))
    ip = lambda x, y: trace_tau(mul(star(y), x))
    assert abs(ip(mul(a, b), c) - ip(b, mul(star(a), c))) < 1e-12
    # L_{a*} is the adjoint of L_a on the GNS space
    M, cols, rows = left_matrix(a, 4, 4)
    Ms, _, _ = left_matrix(star(a), 4, 4)
    assert np.abs(M - Ms.conj().T).max() < 1e-13


def test_mismatched_theta_rejected(rng):
    a = random_element(rng, ThetaMatrix.two(0.1))
    b = random_element(rng, ThetaMatrix.two(0.2))
    with pytest.raises(InputError):
        mul(a, b)


def test_invert():
    T1 = ThetaMatrix.zero(1)
    assert close(invert(NCElement.scalar(T1, 4.0)), NCElement.scalar(T1, 0.25), 1e-12)
    T = ThetaMatrix.two(0.37)
    u = NCElement.monomial(T, (1, 0))
    assert close(invert(u), NCElement.monomial(T, (-1, 0)), 1e-12)
    c = NCElement.from_dict(T1, {1: 1.0, -1: 1.0})
    x = invert(NCElement.unit(T1) + c.scale(0.1), target_support=12)
    ref = NCElement.unit(T1)
    term = NCElement.unit(T1)
    for m in range(1, 40):
        term = mul(term, c.scale(-0.1))
        ref = ref + term
    assert close(x, ref.truncate(12), 1e-10)


def test_invert_singular():
    T = ThetaMatrix.zero(2)
    with pytest.raises(SingularElementError) as exc:
        invert(NCElement.zero(T) + NCElement.monomial(T, (1, 0), 1e-14))
    assert exc.value.smallest_singular_value < 1e-10
    with pytest.raises(NCResError):
        invert(NCElement.from_dict(T, {(0, 0): 1.0, (1, 0): 1.0}), max_radius=16)


def test_exp(rng, theta2):
    zero = NCElement.zero(theta2)
    assert close(exp_element(zero), NCElement.unit(theta2), 0)
    h = selfadjoint(rng, theta2, 1)
    e1 = exp_element(h)
    e2 = exp_element(-h)
    assert close(mul(e1, e2), NCElement.unit(theta2), 1e-11)
    assert exp_element(h.scale(0.5)).is_selfadjoint(1e-12)


def test_exp_matches_grid_at_theta_zero(rng):
    T = ThetaMatrix.zero(2)
    h = selfadjoint(rng, T, 2)
    e = exp_element(h, target_support=40)
    N = 32
    x = 2 * np.pi * np.arange(N) / N
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    f = lambda el: sum(v * np.exp(1j * (k[0] * X1 + k[1] * X2)) for k, v in el.to_dict().items())
    ref = np.exp(f(h))
    assert np.abs(f(e) - ref).max() / np.abs(ref).max() < 1e-8


def test_multiplier_product_rule(rng, theta2):
    a, b, c, d = (random_element(rng, theta2, 1, 2) for _ in range(4))
    X = MultiplierCoefficient.from_pairs(theta2, [(a, b)])
    Y = MultiplierCoefficient.from_pairs(theta2, [(c, d)])
    Z = X.compose(Y)
    ref = MultiplierCoefficient.from_pairs(theta2, [(mul(a, c), mul(d, b))])
    assert np.abs((Z - ref).vals).max(initial=0) < 1e-13
    K = 6
    pts = np.array(np.meshgrid(*[np.arange(-K, K + 1)] * 2, indexing="ij")).reshape(2, -1).T
    inner = np.abs(pts).max(axis=1) <= K - 4
    prod = (X.matrix(K) @ Y.matrix(K)).toarray()
    assert np.abs(prod[:, inner] - Z.matrix(K).toarray()[:, inner]).max() < 1e-12


def test_normal_form_folds_right_at_theta_zero(rng):
    T = ThetaMatrix.zero(2)
    a, b = random_element(rng, T), random_element(rng, T)
    X = MultiplierCoefficient.from_pairs(T, [(a, b)])
    N = X.normal_form()
    assert N.is_pure_left()
    assert N.normal_form() == N
    assert np.abs(X.matrix(5).toarray() - N.matrix(5).toarray()).max() < 1e-13


def test_trace_rule(rng):
    for th, expect_product in ((0.0, False), (1 / math.sqrt(2), True)):
        T = ThetaMatrix.two(th)
        a, b = random_element(rng, T), random_element(rng, T)
        X = MultiplierCoefficient.from_pairs(T, [(a, b)])
        ref = trace_tau(a) * trace_tau(b) if expect_product else trace_tau(mul(a, b))
        assert abs(X.trace_rule() - ref) < 1e-13


def test_serialization_roundtrip(rng, tmp_path):
    T = ThetaMatrix.two(1 / math.sqrt(2))
    a = random_element(rng, T, 3, 6)
    b = loads(dumps(a))
    assert b == a and b.theta == a.theta
    save(a, tmp_path / "a.txt")
    assert load(tmp_path / "a.txt") == a
    with pytest.raises(InputError):
        loads("0 0 1.0 0.0\n")
