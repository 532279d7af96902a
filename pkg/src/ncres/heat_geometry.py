"""Heat-kernel coefficients from residues, the conformal Laplacian on T^2_theta
and the scalar-curvature pairing.

Heat coefficients follow the Mellin correspondence: the coefficient of
t^{-d_j} in Tr(A e^{-tQ}) is Gamma(d_j) (1/q) Res(A Q^{-d_j}) V, and the
t^0 coefficient is zeta(A, Q)(0) = -(1/q) Res(A log Q) V, with V = (2 pi)^n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .functional_calculus import ContourSpec, power_symbol, resolve_contour
from .nc_algebra import MultiplierCoefficient, NCElement, ThetaMatrix, derive, exp_element
from .symbol_calculus import (ClassicalSymbol, EvalContext, compose, from_differential,
                              identity_symbol)
from .traces_residues import (Regularization, SphereQuadrature, residue, residue_log,
                              volume_factor)


# ---------------------------------------------------------------------------
# heat expansions
# ---------------------------------------------------------------------------

@dataclass
class HeatExpansion:
    exponents: list
    coefficients: list
    provenance: list
    errors: list
    constant_from_log: bool = False
    notes: list = field(default_factory=list)

    def coefficient(self, e) -> complex:
        for x, c in zip(self.exponents, self.coefficients):
            if abs(x - e) < 1e-12:
                return c
        raise KeyError(e)

    def to_table(self) -> str:
        lines = ["exponent\tcoef_re\tcoef_im\tprovenance\terror"]
        for e, c, p, err in zip(self.exponents, self.coefficients, self.provenance, self.errors):
            c = complex(c)
            lines.append(f"{e:.12g}\t{c.real:.15g}\t{c.imag:.15g}\t{p}\t{err:.3g}")
        return "\n".join(lines) + "\n"

    def to_records(self) -> list:
        return [{"exponent": e, "coef_re": complex(c).real, "coef_im": complex(c).imag,
                 "provenance": p, "error": err}
                for e, c, p, err in zip(self.exponents, self.coefficients, self.provenance,
                                        self.errors)]


def multiplication_symbol(a, theta=None) -> ClassicalSymbol:
    """Order-0 symbol of left multiplication by a (NCElement, multiplier or number)."""
    if isinstance(a, (NCElement, MultiplierCoefficient)):
        return from_differential(a.theta, [((0,) * a.theta.n, a)])
    if theta is None:
        raise InputError("a scalar multiplier needs theta")
    return from_differential(theta, [((0,) * ThetaMatrix(theta).n if not isinstance(theta, ThetaMatrix)
                                      else (0,) * theta.n, complex(a))])


def heat_coefficients(A: ClassicalSymbol, Q: ClassicalSymbol, depth: int | None = None,
                      proj: Regularization | None = None, contour: ContourSpec | None = None,
                      quad: SphereQuadrature | None = None) -> HeatExpansion:
    """Residue-derived small-t expansion of Tr(A e^{-tQ}) down to the t^0 term.

    ``depth`` limits the number of poles d_j = (a + n - j)/q considered.
    Terms at d_j in Z_{<0} are outside the computed range.
    """
    n = A.n
    q = Q.order
    a = A.order
    if not isinstance(q, int) or q <= 0:
        raise InputError("Q must have positive integer order")
    if not A.is_differential():
        raise InputError("heat coefficients are computed for differential A")
    V = volume_factor(n)
    proj = proj or Regularization.kernel_projector(n)
    quad = quad or SphereQuadrature(n)
    ctx = EvalContext(A.theta, estimate_error=True)
    resolved = resolve_contour(Q, contour, ctx, floor=proj.floor())
    jmax = a + n if depth is None else min(depth, a + n + 1) - 1
    exps, coefs, prov, errs = [], [], [], []
    const_log = False
    for j in range(jmax + 1):
        d = (a + n - j) / q
        ctx.quad_error = 0.0
        if d > 0:
            P = power_symbol(Q, -d, j + 1, resolved=resolved)
            r = residue(compose(A, P, j + 1), quad, ctx)
            c = math.gamma(d) * r * V / q
            err = math.gamma(d) * ctx.quad_error * quad.total() * V / q
            exps.append(-d)
            coefs.append(c)
            prov.append("residue-derived")
            errs.append(err)
        elif d == 0:
            val, qerr = residue_log(A, Q, proj, contour, quad, ctx, with_error=True)
            exps.append(0.0)
            coefs.append(-V * val / q)
            prov.append("residue_log-derived")
            errs.append(V * qerr / q)
            const_log = True
    out = HeatExpansion(exps, coefs, prov, errs, const_log)
    if jmax + 1 < a + n + 1 or (a + n) % q:
        out.notes.append("terms below the constant slot are outside the computed range")
    return out


# ---------------------------------------------------------------------------
# conformal Laplacian
# ---------------------------------------------------------------------------

@dataclass
class ConformalData:
    """Self-adjoint conformal factor h and modulus tau_mod (Im > 0); k = e^{h/2}."""

    h: NCElement
    modulus: complex = 1j
    support: int | None = None
    tol: float = 1e-14

    def __post_init__(self):
        if self.h.n != 2:
            raise InputError("conformal data lives on the two-torus")
        if not self.h.is_selfadjoint(1e-12):
            raise InputError("h must be self-adjoint")
        self.modulus = complex(self.modulus)
        if self.modulus.imag <= 0:
            raise InputError("the modulus must lie in the upper half plane")

    @property
    def theta(self) -> ThetaMatrix:
        return self.h.theta

    def _exp(self, s):
        e = exp_element(self.h * s, self.support)
        # drop coefficients below the working tolerance to keep the band narrow
        keep = np.abs(e.vals) > self.tol * max(e.norm1(), 1.0)
        return NCElement(self.theta, e.keys[keep], e.vals[keep])

    @property
    def k(self) -> NCElement:
        return self._exp(0.5)

    @property
    def k2(self) -> NCElement:
        return self._exp(1.0)

    def dbar(self, a: NCElement) -> NCElement:
        """partial a = delta_1 a + conj(tau_mod) delta_2 a."""
        return derive(a, 1) + derive(a, 2) * self.modulus.conjugate()


def conformal_laplacian(cd: ConformalData) -> ClassicalSymbol:
    """Symbol of Delta_h = partial R_{k^2} partial^*.

    partial = delta_1 + conj(tau_mod) delta_2 has symbol xi_1 + conj(tau_mod) xi_2
    and partial^* = delta_1 + tau_mod delta_2.  At h = 0, tau_mod = i this
    is |xi|^2.
    """
    th = cd.theta
    t = cd.modulus
    d = from_differential(th, [((1, 0), 1.0), ((0, 1), t.conjugate())])
    ds = from_differential(th, [((1, 0), 1.0), ((0, 1), t)])
    R = from_differential(th, [((0, 0), MultiplierCoefficient.right(cd.k2))])
    return compose(compose(d, R), ds)


def scalar_curvature_pairing(cd: ConformalData, a: NCElement | None = None,
                             proj: Regularization | None = None,
                             contour: ContourSpec | None = None,
                             quad: SphereQuadrature | None = None) -> complex:
    """<s_h, a> = C_2 Res(a log Delta_h), C_2 = -(3/q) V with q = 2, V = (2 pi)^2.

    This is three times the t^0 coefficient of Tr(a e^{-t Delta_h}).
    """
    th = cd.theta
    if th.n != 2:
        raise InputError("scalar curvature pairing is implemented for n = 2 only")
    a = NCElement.unit(th) if a is None else a
    A = multiplication_symbol(a)
    Q = conformal_laplacian(cd)
    C2 = -3.0 / 2.0 * volume_factor(2)
    return C2 * residue_log(A, Q, proj, contour, quad)
