"""Acceptance criteria AC1-AC11, each returning a measured value against its tolerance."""
from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass

import numpy as np

from .functional_calculus import power_symbol
from .heat_geometry import (ConformalData, conformal_laplacian, heat_coefficients,
                            multiplication_symbol, scalar_curvature_pairing)
from .nc_algebra import MultiplierCoefficient, NCElement, ThetaMatrix
from .spectral_oracle import (epstein_zeta, fit_expansion, heat_samples, operator_matrix)
from . import _kernels
from .symbol_calculus import (ClassicalSymbol, EvalContext, add, coef, compose, const,
                              diff_xi, evaluate_expr, from_differential, inverse, mul,
                              norm2_expr, spow, xi)
from .traces_residues import (Regularization, SphereQuadrature, cutoff_integral, residue,
                              residue_log, zeta, zeta_at_zero)

IRRATIONAL = 1 / math.sqrt(2)


@dataclass
class ACResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self, timing: bool = True) -> str:
        tag = "PASS" if self.passed else "FAIL"
        t = f"time={self.seconds:.1f}s " if timing else ""
        return (f"{self.name} {tag} measured={self.measured:.3e} tol={self.tolerance:.1e} "
                f"{t}{self.detail}").rstrip()


def _timed(fn):
    @functools.wraps(fn)
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        r = fn(*args, **kwargs)
        r.seconds = time.perf_counter() - t0
        return r
    return run


# ---------------------------------------------------------------------------
# random generators
# ---------------------------------------------------------------------------

def random_element(rng, theta, support=2, terms=3, scale=1.0) -> NCElement:
    n = theta.n
    keys = rng.integers(-support, support + 1, size=(terms, n))
    vals = scale * (rng.standard_normal(terms) + 1j * rng.standard_normal(terms))
    return NCElement(theta, keys, vals)


def random_multiplier(rng, theta, support=2, pairs=2, scale=1.0) -> MultiplierCoefficient:
    out = []
    for _ in range(pairs):
        out.append((random_element(rng, theta, support, 2, scale),
                    random_element(rng, theta, support, 2)))
    return MultiplierCoefficient.from_pairs(theta, out)


def random_differential(rng, theta, order=2, support=2) -> ClassicalSymbol:
    n = theta.n
    spec = []
    for total in range(order + 1):
        for _ in range(2):
            alpha = np.zeros(n, int)
            for _ in range(total):
                alpha[rng.integers(n)] += 1
            spec.append((tuple(alpha), random_multiplier(rng, theta, support, 1)))
    return from_differential(theta, spec)


def _random_homogeneous_poly(rng, theta, degree, monomials=2):
    n = theta.n
    terms = []
    for _ in range(monomials):
        alpha = np.zeros(n, int)
        for _ in range(degree):
            alpha[rng.integers(n)] += 1
        terms.append(mul(xi(tuple(alpha)), coef(random_multiplier(rng, theta, 1, 1))))
    return add(*terms)


def random_classical(rng, theta, order: int, depth: int, p: int) -> ClassicalSymbol:
    """Components |xi|^{-2(p+j)} P_j(xi), P_j homogeneous of degree order + 2p + j."""
    n = theta.n
    r2 = norm2_expr(n)
    comps = []
    for j in range(depth):
        deg = order + 2 * p + j
        comps.append(mul(spow(r2, -(p + j)), _random_homogeneous_poly(rng, theta, deg)))
    return ClassicalSymbol(theta, order, comps)


def flat_laplacian(theta) -> ClassicalSymbol:
    n = theta.n
    return from_differential(theta, [(tuple(2 if i == j else 0 for i in range(n)), 1.0)
                                     for j in range(n)])


def standard_h(theta) -> NCElement:
    return NCElement.from_dict(theta, {(1, 0): 0.3, (-1, 0): 0.3})


def random_line_h(rng, theta, amplitude=0.15) -> NCElement:
    """Self-adjoint h supported on a random lattice line through 0."""
    dirs = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1)]
    e = np.array(dirs[rng.integers(len(dirs))])
    coeffs = {}
    for j in (1, 2):
        c = amplitude / j * (rng.standard_normal() + 1j * rng.standard_normal())
        coeffs[tuple(j * e)] = c
        coeffs[tuple(-j * e)] = np.conj(c)
    coeffs[(0, 0)] = amplitude * rng.standard_normal()
    return NCElement.from_dict(theta, coeffs)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

@_timed
def ac1() -> ACResult:
    worst = 0.0
    for th in (0.0, IRRATIONAL):
        T = ThetaMatrix.two(th)
        P = power_symbol(flat_laplacian(T), -1, 1)
        worst = max(worst, abs(residue(P) - 1 / (2 * math.pi)))
    return ACResult("AC1", worst <= 1e-10, worst, 1e-10, "Res(Delta^-1) vs 1/(2 pi)")


@_timed
def ac2() -> ACResult:
    ts = np.geomspace(0.02, 0.1, 24)
    vals = _kernels.lattice_gauss_sum(60, 2, ts)
    fit = fit_expansion(list(zip(ts, vals)), (-1, 0))
    T = ThetaMatrix.zero(2)
    H = heat_coefficients(multiplication_symbol(1.0, T), flat_laplacian(T))
    dev_fit = max(abs(fit.coefficient(-1) - math.pi), abs(fit.coefficient(0)))
    dev_res = max(abs(H.coefficient(-1) - math.pi), abs(H.coefficient(0)))
    worst = max(dev_fit, dev_res)
    return ACResult("AC2", worst <= 1e-3, worst, 1e-3,
                    f"fit=({fit.coefficient(-1).real:.6f},{fit.coefficient(0).real:.2e}) "
                    f"residue=({H.coefficient(-1).real:.6f},{H.coefficient(0).real:.2e})")


@_timed
def ac3() -> ACResult:
    T = ThetaMatrix.zero(2)
    one = multiplication_symbol(1.0, T)
    z0 = zeta_at_zero(one, flat_laplacian(T))
    ep = epstein_zeta(0.0) + 1.0
    ts = np.geomspace(0.02, 0.1, 24)
    fit = fit_expansion(list(zip(ts, _kernels.lattice_gauss_sum(60, 2, ts))), (-1, 0))
    heat_route = abs(z0 - fit.coefficient(0))
    ok = abs(z0) <= 1e-6 and abs(ep) <= 1e-6 and heat_route <= 1e-3
    return ACResult("AC3", ok, max(abs(z0), abs(ep)), 1e-6,
                    f"zeta(0)={z0.real:.2e} |Z(0)+1|={abs(ep):.2e} heat-route diff={heat_route:.2e}")


@_timed
def ac4(seed: int = 4, pairs: int = 20, K: int = 12) -> ACResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(pairs):
        T = ThetaMatrix.two(0.0 if i % 2 == 0 else IRRATIONAL)
        A = random_differential(rng, T, int(rng.integers(0, 3)))
        B = random_differential(rng, T, int(rng.integers(0, 3)))
        C = compose(A, B)
        MA, MB, MC = operator_matrix(A, K), operator_matrix(B, K), operator_matrix(C, K)
        prod = (MA.matrix @ MB.matrix).toarray()
        ref = MC.dense()
        inner = np.abs(MA.points).max(axis=1) <= K - MA.band - MB.band
        dev = np.abs(prod[:, inner] - ref[:, inner]).max()
        worst = max(worst, dev)
    return ACResult("AC4", worst <= 1e-10, worst, 1e-10, f"{pairs} pairs, K={K}")


@_timed
def ac5(seed: int = 5, pairs: int = 100) -> ACResult:
    rng = np.random.default_rng(seed)
    quad = SphereQuadrature(2, 24)
    worst = 0.0
    size = 0.0
    for i in range(pairs):
        T = ThetaMatrix.two(IRRATIONAL if i % 2 == 0 else 0.0)
        aA = int(rng.integers(0, 2))
        j0 = int(rng.integers(0, 2))
        aB = -2 - aA + j0
        A = random_classical(rng, T, aA, j0 + 1, 1)
        B = random_classical(rng, T, aB, j0 + 1, 2)
        AB = compose(A, B, j0 + 1)
        BA = compose(B, A, j0 + 1)
        ctx = EvalContext(T)
        r_ab = residue(AB, quad, ctx)
        r_ba = residue(BA, quad, ctx)
        worst = max(worst, abs(r_ab - r_ba))
        size = max(size, abs(r_ab))
    return ACResult("AC5", worst <= 1e-8, worst, 1e-8,
                    f"{pairs} pairs, max |Res(AB)|={size:.2e}")


@_timed
def ac6() -> ACResult:
    regs = [Regularization.kernel_projector(2, 1.0),
            Regularization(((0, 0), (1, 0), (0, 1)), (0.05, 2.0, 3.0))]
    worst = 0.0
    vals = []
    for th, a in ((IRRATIONAL, None), (0.0, "cos")):
        T = ThetaMatrix.two(th)
        Q = conformal_laplacian(ConformalData(standard_h(T)))
        el = NCElement.unit(T) if a is None else NCElement.from_dict(T, {(1, 0): 1, (-1, 0): 1})
        A = multiplication_symbol(el)
        r = [residue_log(A, Q, proj=p) for p in regs]
        vals.append(r[0])
        worst = max(worst, abs(r[0] - r[1]))
    return ACResult("AC6", worst <= 1e-8, worst, 1e-8,
                    "values " + ", ".join(f"{v.real:.6e}" for v in vals))


def curvature_comparison(theta12: float, a: NCElement | None, h: NCElement | None = None,
                         K: int = 40, window=(0.02, 0.05)):
    """(residue-derived HeatExpansion, oracle FitResult) for Tr(a e^{-t Delta_h})."""
    T = ThetaMatrix.two(theta12)
    h = standard_h(T) if h is None else h
    Q = conformal_laplacian(ConformalData(h))
    el = NCElement.unit(T) if a is None else a
    H = heat_coefficients(multiplication_symbol(el), Q)
    M = operator_matrix(Q, K)
    S = heat_samples(M, a, window=window)
    fit = fit_expansion(S, (-1, 0, 1, 2))
    return H, fit


@_timed
def ac7(K: int = 40) -> ACResult:
    worst = 0.0
    parts = []
    for th in (IRRATIONAL, 0.0):
        T = ThetaMatrix.two(th)
        scale = None
        for a in (None, NCElement.from_dict(T, {(1, 0): 1, (-1, 0): 1})):
            H, fit = curvature_comparison(th, a, K=K)
            if scale is None:
                scale = abs(H.coefficient(-1))
            dev = abs(H.coefficient(0) - fit.coefficient(0)) / scale
            worst = max(worst, dev)
            parts.append(f"{dev:.1e}")
    return ACResult("AC7", worst <= 0.05, worst, 0.05, "scaled devs " + " ".join(parts))


@_timed
def ac8() -> ACResult:
    T = ThetaMatrix.zero(2)
    rep = zeta(multiplication_symbol(1.0, T), flat_laplacian(T), n_poles=1)
    res = rep.poles[0]["residue"]
    m = 32
    phi = 2 * np.pi * np.arange(m) / m
    r = 0.1
    zs = 1 + r * np.exp(1j * phi)
    f = np.array([epstein_zeta(z) + 1.0 for z in zs])
    c = {k: np.mean(f * (r * np.exp(1j * phi)) ** (-k)) for k in (-2, -1)}
    fit_res = c[-1]
    rel = abs(res - fit_res) / abs(fit_res)
    second = abs(c[-2]) / abs(fit_res)
    ok = rel <= 1e-3 and second <= 1e-4
    return ACResult("AC8", ok, rel, 1e-3,
                    f"residue={res.real:.9f} laurent={fit_res.real:.9f} |c_-2|/res={second:.1e}")


@_timed
def ac9(seed: int = 9, count: int = 20) -> ACResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(count):
        T = ThetaMatrix.two(0.0 if i % 2 else IRRATIONAL)
        spec = []
        for _ in range(4):
            alpha = tuple(int(x) for x in rng.integers(0, 3, size=2))
            spec.append((alpha, random_multiplier(rng, T, 2, 1)))
        S = from_differential(T, spec)
        worst = max(worst, abs(cutoff_integral(S)))
    return ACResult("AC9", worst <= 1e-12, worst, 1e-12, f"{count} polynomial symbols")


def _probe_expressions(rng, T):
    r2 = norm2_expr(2)
    k2 = NCElement.from_dict(T, {(0, 0): 1.0, (1, 0): 0.2, (-1, 0): 0.2})
    left = random_multiplier(rng, T, 1, 1, 0.3)
    yield inverse(add(r2, const(1.0)))
    yield inverse(add(mul(r2, coef(MultiplierCoefficient.right(k2))), const(0.7)))
    yield mul(xi((1, 0)), coef(left), inverse(add(mul(r2, coef(MultiplierCoefficient.left(k2))),
                                                  const(1.3 + 0.4j))), coef(left))
    yield mul(spow(r2, -0.75 + 0.2j), coef(left), xi((0, 2)))
    yield mul(inverse(add(mul(r2, coef(MultiplierCoefficient.right(k2))), const(0.5))),
              coef(MultiplierCoefficient.right(k2)),
              inverse(add(mul(r2, coef(MultiplierCoefficient.right(k2))), const(0.5))))


@_timed
def ac10(seed: int = 10, probes: int = 200, h: float = 1e-5) -> ACResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    count = 0
    while count < probes:
        T = ThetaMatrix.two(IRRATIONAL if count % 2 else 0.0)
        for e in _probe_expressions(rng, T):
            if count >= probes:
                break
            x = rng.standard_normal(2) * 1.5
            i = int(rng.integers(1, 3))
            ctx = EvalContext(T)
            d = evaluate_expr(diff_xi(e, i), T, x, None, ctx)
            step = np.zeros(2)
            step[i - 1] = h
            fp = evaluate_expr(e, T, x + step, None, ctx)
            fm = evaluate_expr(e, T, x - step, None, ctx)
            fd = (fp - fm).scale(1 / (2 * h))
            err = np.abs((d - fd).vals).max(initial=0.0)
            ref = max(np.abs(d.vals).max(initial=0.0), 1e-300)
            worst = max(worst, err / ref)
            count += 1
    return ACResult("AC10", worst <= 1e-6, worst, 1e-6, f"{probes} probes")


@_timed
def ac11(seed: int = 11, count: int = 5) -> ACResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for th in (0.0, IRRATIONAL):
        T = ThetaMatrix.two(th)
        for _ in range(count):
            h = random_line_h(rng, T)
            cd = ConformalData(h)
            pairing = scalar_curvature_pairing(cd)
            H = heat_coefficients(multiplication_symbol(NCElement.unit(T)),
                                  conformal_laplacian(cd), depth=1)
            worst = max(worst, abs(pairing) / abs(H.coefficient(-1)))
    return ACResult("AC11", worst <= 0.05, worst, 0.05,
                    f"{2 * count} random h, |<s_h,1>| / |c_-1|")


ALL = {"AC1": ac1, "AC2": ac2, "AC3": ac3, "AC4": ac4, "AC5": ac5, "AC6": ac6, "AC7": ac7,
       "AC8": ac8, "AC9": ac9, "AC10": ac10, "AC11": ac11}


def run_all(names=None, stream=None) -> list:
    out = []
    for name, fn in ALL.items():
        if names and name not in names:
            continue
        r = fn()
        out.append(r)
        if stream is not None:
            print(r.line(), file=stream, flush=True)
    return out
