import math

import numpy as np
import pytest

from ncres.acceptance import curvature_comparison, flat_laplacian, random_element, random_line_h
from ncres.errors import InputError
from ncres.heat_geometry import (ConformalData, conformal_laplacian, heat_coefficients,
                                 multiplication_symbol, scalar_curvature_pairing)
from ncres.nc_algebra import MultiplierCoefficient, NCElement, ThetaMatrix, star
from ncres.spectral_oracle import (fit_expansion, heat_samples, heat_trace, operator_matrix)
from ncres.symbol_calculus import EvalContext, evaluate_expr

IRR = 1 / math.sqrt(2)


def cos_element(T, eps=1.0, k=(1, 0)):
    mk = tuple(-x for x in k)
    return NCElement.from_dict(T, {k: eps / 2, mk: eps / 2})


def test_flat_reduction(theta2):
    Q = conformal_laplacian(ConformalData(NCElement.zero(theta2)))
    ctx = EvalContext(theta2)
    for x in ([1.0, 0.0], [0.3, -1.7]):
        v = evaluate_expr(Q.component(0), theta2, np.array(x), None, ctx)
        assert np.abs((v - MultiplierCoefficient.identity(theta2, np.dot(x, x))).vals).max(initial=0) < 1e-14
    for j in (1, 2):
        v = evaluate_expr(Q.component(j), theta2, np.array([0.3, 0.4]), None, ctx)
        assert np.abs(v.vals).max(initial=0) < 1e-14


def test_leading_coefficient_is_right_multiplication(theta2):
    cd = ConformalData(cos_element(theta2, 0.6))
    Q = conformal_laplacian(cd)
    v = evaluate_expr(Q.component(0), theta2, np.array([1.0, 0.0]), None, EvalContext(theta2))
    ref = MultiplierCoefficient.right(cd.k2)
    assert np.abs((v - ref).vals).max(initial=0) < 1e-13
    # the matrix acts as m_1^2 R_{k^2} on basis vectors far from the boundary
    K = 24
    M = operator_matrix(Q, K).dense()
    R = ref.matrix(K).toarray()
    pts = operator_matrix(flat_laplacian(theta2), K).points
    for m1 in range(1, 11):
        col = int(np.nonzero((pts[:, 0] == m1) & (pts[:, 1] == 0))[0][0])
        lead = m1 ** 2 * R[:, col]
        assert np.abs(M[:, col] - lead).max() <= 2 * m1 * np.abs(R[:, col]).sum() + 1e-12


def test_matrix_hermitian_positive(rng, theta2):
    for _ in range(3):
        h = random_line_h(rng, theta2, 0.2)
        cd = ConformalData(h)
        M = operator_matrix(conformal_laplacian(cd), int(np.abs(cd.k2.keys).max()) + 8)
        assert M.hermitian_residual() <= 1e-10
        w = np.sort(M.eigenvalues())
        assert w[0] >= -1e-8


def test_kernel_is_constants_at_theta_zero():
    T = ThetaMatrix.zero(2)
    M = operator_matrix(conformal_laplacian(ConformalData(cos_element(T, 0.2))), 10)
    blocks = M.eigh()
    small = []
    for idx, w, V in blocks:
        for j in np.nonzero(np.abs(w) < 1e-10)[0]:
            small.append((idx, V[:, j]))
    assert len(small) == 1
    idx, v = small[0]
    pts = M.points[idx]
    assert abs(abs(v[np.all(pts == 0, axis=1)][0]) - 1) < 1e-10


def test_conformal_data_validation():
    T = ThetaMatrix.two(IRR)
    with pytest.raises(InputError):
        ConformalData(NCElement.from_dict(T, {(1, 0): 1j}))
    with pytest.raises(InputError):
        ConformalData(NCElement.zero(T), modulus=-1j)
    with pytest.raises(InputError):
        ConformalData(NCElement.zero(ThetaMatrix.zero(3)))
    cd = ConformalData(cos_element(T, 0.4))
    assert cd.k.is_selfadjoint(1e-12)
    assert (cd.k * cd.k - cd.k2).norm1() < 1e-12


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_flat_heat_leading_coefficient(n):
    T = ThetaMatrix.zero(n)
    H = heat_coefficients(multiplication_symbol(1.0, T), flat_laplacian(T))
    assert H.exponents[0] == -n / 2
    assert abs(H.coefficient(-n / 2) - math.pi ** (n / 2)) < 1e-10
    assert H.constant_from_log and abs(H.coefficient(0)) < 1e-12
    assert all(abs(c) < 1e-12 for c in H.coefficients[1:])


def test_flat_heat_multiplication(theta2, rng):
    Q = flat_laplacian(theta2)
    a = random_element(rng, theta2, 2, 5)
    H = heat_coefficients(multiplication_symbol(a), Q)
    assert abs(H.coefficient(-1) - math.pi * a.coeff((0, 0))) < 1e-10
    off = a - NCElement.scalar(theta2, a.coeff((0, 0)))
    H0 = heat_coefficients(multiplication_symbol(off), Q)
    assert abs(H0.coefficient(-1)) < 1e-14 and abs(H0.coefficient(0)) < 1e-14
    # oracle: L_a e^{-t Delta} has diagonal tau(a) e^{-t|m|^2}
    M = operator_matrix(Q, 40)
    S = heat_samples(M, a, window=(0.02, 0.1))
    fit = fit_expansion(S, (-1, 0))
    assert abs(fit.coefficient(-1) - H.coefficient(-1)) <= 1e-3 * abs(H.coefficient(-1))
    assert abs(fit.coefficient(0) - H.coefficient(0)) <= 5e-2 * abs(H.coefficient(-1))
    assert heat_trace(M, off, 0.05) == 0


def test_heat_expansion_tables():
    T = ThetaMatrix.zero(2)
    H = heat_coefficients(multiplication_symbol(1.0, T), flat_laplacian(T))
    lines = H.to_table().splitlines()
    assert lines[0].split("\t") == ["exponent", "coef_re", "coef_im", "provenance", "error"]
    recs = H.to_records()
    assert recs[0]["provenance"] == "residue-derived"
    assert recs[-1]["provenance"] == "residue_log-derived"
    assert np.all(np.diff(H.exponents) > 0)


def test_pairing_vanishes_when_flat(theta2, rng):
    cd = ConformalData(NCElement.zero(theta2))
    for _ in range(3):
        assert abs(scalar_curvature_pairing(cd, random_element(rng, theta2))) < 1e-12


def test_pairing_rejects_other_dimensions():
    T = ThetaMatrix.zero(3)
    with pytest.raises(InputError):
        scalar_curvature_pairing(ConformalData(NCElement.zero(T)))


@pytest.mark.parametrize("which", ["unit", "cos"])
def test_pairing_matches_oracle_constant(which):
    T = ThetaMatrix.zero(2)
    h = cos_element(T, 0.2)
    a = None if which == "unit" else cos_element(T, 2.0)
    H, fit = curvature_comparison(0.0, a, h=h, K=40)
    pairing = scalar_curvature_pairing(ConformalData(h), a)
    scale = abs(H.coefficient(-1))
    assert abs(pairing - 3 * fit.coefficient(0)) <= 0.05 * scale
    assert abs(pairing - 3 * H.coefficient(0)) < 1e-12
    if which == "cos":
        assert abs(pairing - 0.6283185307) < 1e-8


def test_gauss_bonnet_random(rng):
    for th in (0.0, IRR):
        T = ThetaMatrix.two(th)
        for _ in range(2):
            cd = ConformalData(random_line_h(rng, T))
            H = heat_coefficients(multiplication_symbol(NCElement.unit(T)),
                                  conformal_laplacian(cd), depth=1)
            assert abs(scalar_curvature_pairing(cd)) <= 0.05 * abs(H.coefficient(-1))
