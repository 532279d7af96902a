import math

import numpy as np
import pytest
from scipy.integrate import quad as scipy_quad

from ncres.acceptance import flat_laplacian, random_classical, random_differential, standard_h
from ncres.errors import InputError
from ncres.functional_calculus import power_symbol
from ncres.heat_geometry import ConformalData, conformal_laplacian, multiplication_symbol
from ncres.nc_algebra import NCElement, ThetaMatrix
from ncres.spectral_oracle import epstein_zeta
from ncres.symbol_calculus import (ClassicalSymbol, ZERO, compose, from_differential,
                                   identity_symbol, scale_symbol)
from ncres.traces_residues import (Regularization, SphereQuadrature, canonical_trace,
                                   cutoff_integral, lattice_trace, pole_list, residue,
                                   residue_log, volume_factor, zeta, zeta_at_zero)

IRR = 1 / math.sqrt(2)


def shifted(T, c=1.0):
    return from_differential(T, [((2, 0), 1.0), ((0, 2), 1.0), ((0, 0), c)])


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_sphere_quadrature_volume(n):
    q = SphereQuadrature(n, 24)
    vol = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    assert abs(q.total() - vol / (2 * math.pi) ** n) < 1e-13
    if n >= 2:
        # second moments: int x_1^2 = vol / n
        m2 = np.dot(q.weights, q.nodes[:, 0] ** 2)
        assert abs(m2 - vol / n / (2 * math.pi) ** n) < 1e-13


def test_residue_of_inverse_laplacian(theta2):
    P = power_symbol(flat_laplacian(theta2), -1, 1)
    assert abs(residue(P) - 1 / (2 * math.pi)) < 1e-10


def test_residue_vanishes_on_differential(theta2, rng):
    for _ in range(5):
        assert residue(random_differential(rng, theta2)) == 0
    # no component of degree -n on the ladder
    A = power_symbol(flat_laplacian(theta2), -0.25, 3)
    assert residue(A) == 0


def test_residue_commutator(theta2, rng):
    q = SphereQuadrature(2, 24)
    for _ in range(5):
        A = random_classical(rng, theta2, 1, 2, 1)
        B = random_classical(rng, theta2, -2, 2, 2)
        assert abs(residue(compose(A, B, 2), q) - residue(compose(B, A, 2), q)) < 1e-8


def test_residue_log_flat():
    T = ThetaMatrix.zero(2)
    assert abs(residue_log(identity_symbol(T), flat_laplacian(T))) < 1e-12


def test_residue_log_regularization_invariance():
    T = ThetaMatrix.two(IRR)
    Q = conformal_laplacian(ConformalData(standard_h(T)))
    A = multiplication_symbol(NCElement.from_dict(T, {(0, 1): 1.0, (0, -1): 1.0}))
    r1 = residue_log(A, Q, Regularization.kernel_projector(2, 1.0))
    r2 = residue_log(A, Q, Regularization(((0, 0), (2, 1)), (0.2, 5.0)))
    assert abs(r1 - r2) < 1e-8


def test_residue_log_scaling():
    T = ThetaMatrix.two(IRR)
    Q = conformal_laplacian(ConformalData(standard_h(T)))
    A = multiplication_symbol(NCElement.unit(T))
    # log(cQ) = log c + log Q and Res(A) = 0 for differential A
    assert abs(residue_log(A, scale_symbol(Q, 3.0)) - residue_log(A, Q)) < 1e-9


def test_cutoff_polynomial_vanishes(theta2, rng):
    for _ in range(5):
        assert abs(cutoff_integral(random_differential(rng, theta2))) < 1e-12


def test_cutoff_trace_class_matches_quadrature():
    T = ThetaMatrix.zero(2)
    P = power_symbol(shifted(T), -2, 4)
    ref, _ = scipy_quad(lambda r: 2 * math.pi * r / (1 + r * r) ** 2, 0, np.inf,
                        epsabs=1e-14, epsrel=1e-13)
    assert abs(cutoff_integral(P) - ref / (2 * math.pi) ** 2) < 1e-8


def test_cutoff_linear(rng):
    T = ThetaMatrix.zero(2)
    A = power_symbol(shifted(T), -0.75, 4)
    B = power_symbol(shifted(T, 2.0), -0.75, 4)
    lhs = cutoff_integral(A + scale_symbol(B, 2.5))
    rhs = cutoff_integral(A) + 2.5 * cutoff_integral(B)
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(rhs))


def test_cutoff_rejects_shallow_remainder():
    T = ThetaMatrix.zero(2)
    with pytest.raises(InputError):
        cutoff_integral(power_symbol(shifted(T), -0.25, 1))


def test_canonical_trace_lattice_sum():
    T = ThetaMatrix.zero(2)
    P = power_symbol(shifted(T), -2, 4)
    tr = canonical_trace(P, K=200)
    k = np.arange(-1000, 1001.0)
    brute = ((k[:, None] ** 2 + k[None, :] ** 2 + 1.0) ** -2).sum()
    tail = math.pi / 1000.5 ** 2  # sum beyond the box, |k|^-4 integrated
    assert abs(tr - (brute + tail)) / abs(brute) < 1e-4
    assert abs(tr - 3.2265813644) < 1e-8


def test_canonical_trace_noninteger_order():
    T = ThetaMatrix.zero(2)
    P = power_symbol(shifted(T), -0.75, 5)
    a = canonical_trace(P, K=40)
    b = canonical_trace(P, K=80)
    assert np.isfinite(a) and abs(a - b) < 1e-7
    Ph = power_symbol(shifted(T), -0.25, 5)  # order -0.5
    assert np.isfinite(canonical_trace(Ph, K=60))


def test_canonical_trace_rejects_integer_order():
    T = ThetaMatrix.zero(2)
    with pytest.raises(InputError):
        canonical_trace(power_symbol(shifted(T), -1, 3))
    with pytest.raises(InputError):
        canonical_trace(shifted(T))


def test_lattice_trace_needs_full_symbol():
    T = ThetaMatrix.zero(2)
    P = power_symbol(flat_laplacian(T), -0.75, 3)
    bare = ClassicalSymbol(T, P.order, P.components)
    with pytest.raises(InputError):
        lattice_trace(bare)


def test_pole_list():
    assert pole_list(0, 2, 2, 4) == [1, 0.5, 0, -0.5]


def test_zeta_poles_flat():
    T = ThetaMatrix.zero(2)
    rep = zeta(identity_symbol(T), flat_laplacian(T), n_poles=3)
    assert rep.pole_locations() == [1.0, 0.5, 0.0]
    res = [p["residue"] for p in rep.poles]
    # half of V Res(Q^-1) = (2 pi)^2 / (2 pi) / 2
    assert abs(res[0] - math.pi) < 1e-10
    assert abs(res[1]) < 1e-12 and abs(res[2]) < 1e-12
    assert abs(rep.value_at_zero) < 1e-12


def test_zeta_residue_against_epstein_laurent():
    T = ThetaMatrix.zero(2)
    rep = zeta(identity_symbol(T), flat_laplacian(T), n_poles=1)
    m = 32
    w = 0.1 * np.exp(2j * np.pi * np.arange(m) / m)
    f = np.array([epstein_zeta(1 + x) + 1 for x in w])
    laurent = np.mean(f * w)
    assert abs(rep.poles[0]["residue"] - laurent) / abs(laurent) < 1e-3


def test_zeta_grid_and_finite_part_against_epstein():
    T = ThetaMatrix.zero(2)
    rep = zeta(identity_symbol(T), flat_laplacian(T), z_grid=[2.0, 1.0, 0.5, -0.75], n_poles=1,
               finite_parts=[1.0], K=80)
    by_z = {g["z"].real: g for g in rep.grid}
    assert by_z[1.0]["value"] is None and "pole" in by_z[1.0]["note"]
    for z in (2.0, 0.5, -0.75):
        ref = epstein_zeta(z) + 1
        assert abs(by_z[z]["value"] - ref) < 1e-7
        assert by_z[z]["error"] < 1e-6
    m = 32
    w = 0.1 * np.exp(2j * np.pi * np.arange(m) / m)
    c0 = np.mean([epstein_zeta(1 + x) + 1 for x in w])
    assert abs(rep.finite_parts[0]["fp"] - c0) < 1e-7


def test_zeta_report_serialises():
    T = ThetaMatrix.zero(2)
    rep = zeta(identity_symbol(T), flat_laplacian(T), z_grid=[2.0], n_poles=2, K=20)
    recs = rep.to_records()
    assert any(r.get("kind") == "pole" for r in recs)
    table = rep.to_table()
    assert table.splitlines()[0].count("\t") >= 2


def test_zeta_at_zero():
    T = ThetaMatrix.zero(2)
    assert abs(zeta_at_zero(identity_symbol(T), flat_laplacian(T))) < 1e-12
    assert abs(epstein_zeta(0.0) + 1) < 1e-8
    zero = ClassicalSymbol(T, 0, [ZERO], exact=True, full=ZERO)
    assert zeta_at_zero(zero, flat_laplacian(T)) == 0
    with pytest.raises(InputError):
        zeta_at_zero(power_symbol(flat_laplacian(T), -0.5, 3), flat_laplacian(T))


def test_volume_factor():
    assert volume_factor(2) == (2 * math.pi) ** 2
