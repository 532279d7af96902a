"""Resolvent parametrix, complex powers and logarithms by contour quadrature.

Resolvent components b_{-q-j}(xi, lambda) are exact expressions; powers and
logs integrate them against lambda^z or log lambda over a closed keyhole
contour that encircles the spectrum of the leading symbol on the unit
sphere and avoids the spectral cut:

    sigma_{qz-j}(Q^z)(xi) = -(1/2 pi i) oint lambda^z b_{-q-j}(xi, lambda) dlambda.

The sign is fixed by requiring power 1 to reproduce sigma(Q).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .errors import EllipticityError, InputError, MissingComponentError
from .nc_algebra import NCElement
from .symbol_calculus import (ClassicalSymbol, EvalContext, HomogeneousComponent, ONE, ZERO,
                              add, compose, const, contour_integral, diff_x_multi,
                              diff_xi_multi, evaluate_expr, inverse, is_zero, lam, mul, neg,
                              norm2_expr, slog, spow, _multi_indices, _descending)


# ---------------------------------------------------------------------------
# contours
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContourSpec:
    """Keyhole contour around the spectrum with the cut along arg lambda = beta.

    ``eps`` and ``R`` left as None are chosen from the leading-symbol
    spectrum: eps = (smallest |eigenvalue|) / 3 and R = 4 q (largest).
    ``nodes`` is the Gauss-Legendre count per segment (four segments).
    """

    beta: float = math.pi
    eps: float | None = None
    R: float | None = None
    nodes: int = 48

    def resolve(self, lo: float, hi: float, q: int, n: int) -> "ResolvedContour":
        eps = lo / 3.0 if self.eps is None else float(self.eps)
        R = 4.0 * q * hi if self.R is None else float(self.R)
        if not 0 < eps < lo:
            raise EllipticityError(f"inner radius {eps:.3g} must lie below the spectrum ({lo:.3g})")
        if not R > hi:
            raise EllipticityError(f"outer radius {R:.3g} must exceed the spectrum ({hi:.3g})")
        return ResolvedContour(self.beta, eps, R, self.nodes, n, lo, hi)


@dataclass(frozen=True)
class ResolvedContour:
    beta: float
    eps: float
    R: float
    nodes: int
    n: int
    spec_lo: float = 0.0
    spec_hi: float = 0.0
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def key(self):
        return ("keyhole", self.beta, self.eps, self.R, self.nodes)

    def quadrature(self, refine: bool = False):
        """Nodes, dlambda weights and branch-correct log lambda, counter-clockwise."""
        m = self.nodes * (2 if refine else 1)
        hit = self._cache.get(m)
        if hit is not None:
            return hit
        x, w = roots_legendre(m)
        b = self.beta
        lam_parts, dl_parts, log_parts = [], [], []
        # outer circle, phi from beta - 2 pi to beta
        phi = b - math.pi + math.pi * x
        lam_o = self.R * np.exp(1j * phi)
        lam_parts.append(lam_o)
        dl_parts.append(1j * lam_o * math.pi * w)
        log_parts.append(math.log(self.R) + 1j * phi)
        # along the cut, inward on the arg = beta side
        u0, u1 = math.log(self.eps), math.log(self.R)
        u = 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * x
        r = np.exp(u)
        ray = np.exp(1j * b)
        du = 0.5 * (u1 - u0) * w
        lam_parts.append(r * ray)
        dl_parts.append(-ray * r * du)
        log_parts.append(u + 1j * b)
        # inner circle, clockwise from beta to beta - 2 pi
        lam_i = self.eps * np.exp(1j * phi)
        lam_parts.append(lam_i)
        dl_parts.append(-1j * lam_i * math.pi * w)
        log_parts.append(math.log(self.eps) + 1j * phi)
        # back out on the arg = beta - 2 pi side
        lam_parts.append(r * ray)
        dl_parts.append(ray * r * du)
        log_parts.append(u + 1j * (b - 2 * math.pi))
        out = (np.concatenate(lam_parts), np.concatenate(dl_parts), np.concatenate(log_parts))
        self._cache[m] = out
        return out


def leading_spectrum(Q: ClassicalSymbol, directions: np.ndarray, ctx: EvalContext | None = None):
    """Eigenvalues of the leading symbol at the given unit directions."""
    from .nc_algebra import ElementSpectrum
    if ctx is None:
        ctx = EvalContext(Q.theta)
    lead = Q.component(0)
    n = Q.n
    eigs = []
    for d in directions:
        mc = evaluate_expr(lead, Q.theta, d, None, ctx)
        keys = mc.keys
        if not np.any(keys):
            eigs.append(np.atleast_1d(mc.vals[0] if len(mc.vals) else 0.0))
            continue
        left = not np.any(keys[:, n:])
        right = not np.any(keys[:, :n])
        if not (left or right):
            raise EllipticityError("leading symbol mixes left and right multipliers; "
                                   "spectral estimate unavailable")
        half = keys[:, :n] if left else keys[:, n:]
        el = NCElement(Q.theta, half, mc.vals, _canonical_form=True)
        eigs.append(ctx.spectrum(el).eigvals)
    return eigs


def check_spectral_cut(eigs, beta: float, directions=None):
    """Smallest and largest |eigenvalue|; raises when an eigenvalue meets the cut."""
    lo, hi = math.inf, 0.0
    for i, e in enumerate(eigs):
        e = np.asarray(e, np.complex128)
        a = np.abs(e)
        if np.any(a < 1e-12):
            raise EllipticityError("leading symbol is singular", xi=None if directions is None
                                   else directions[i], lam=0.0)
        rel = np.angle(e * np.exp(-1j * beta))
        if np.any(np.abs(rel) < 1e-6):
            bad = e[np.argmin(np.abs(rel))]
            raise EllipticityError("leading-symbol spectrum meets the spectral cut",
                                   xi=None if directions is None else directions[i], lam=bad)
        lo = min(lo, float(a.min()))
        hi = max(hi, float(a.max()))
    return lo, hi


def _sphere_directions(n: int, m: int = 16):
    from .traces_residues import SphereQuadrature
    return SphereQuadrature(n, m).nodes


def resolve_contour(Q: ClassicalSymbol, contour: ContourSpec | None = None,
                    ctx: EvalContext | None = None, floor: float | None = None
                    ) -> ResolvedContour:
    """Validate the spectral cut over sphere nodes and fix eps and R.

    ``floor`` caps the inner radius (finite-rank regularizations use it).
    """
    contour = contour or ContourSpec()
    q = Q.order
    dirs = _sphere_directions(Q.n)
    eigs = leading_spectrum(Q, dirs, ctx)
    lo, hi = check_spectral_cut(eigs, contour.beta, dirs)
    # direction sampling can miss the extremes slightly; keep a margin
    lo_m, hi_m = lo * 0.9, hi * 1.1
    if floor is not None and contour.eps is None:
        contour = ContourSpec(contour.beta, min(lo_m / 3.0, floor), contour.R, contour.nodes)
    return contour.resolve(lo_m, hi_m, int(q), Q.n)


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------

@dataclass
class ResolventExpansion:
    """b_{-q-j}(xi, lambda), j = 0..J, as lambda-parametric components (lambda at weight q)."""

    Q: ClassicalSymbol
    q: int
    shifted: ClassicalSymbol
    components: list

    @property
    def J(self) -> int:
        return len(self.components) - 1

    def expr(self, j: int):
        return self.components[j].expr

    def as_symbol(self) -> ClassicalSymbol:
        return ClassicalSymbol(self.Q.theta, -self.q, [c.expr for c in self.components],
                               lam_weight=self.q)

    def parametrix_residual(self, J: int | None = None) -> list:
        """Components of sigma((Q - lambda) o B) - 1 through depth J."""
        J = self.J if J is None else J
        C = compose(self.shifted, self.as_symbol(), J + 1)
        out = []
        for j, c in enumerate(C.components):
            out.append(add(c, neg(ONE)) if j == 0 else c)
        return out


def _check_weight_order(Q: ClassicalSymbol) -> int:
    q = Q.order
    if not isinstance(q, int) or q <= 0:
        raise InputError(f"weight must have positive integer order, got {q}")
    return q


def resolvent_components(Q: ClassicalSymbol, J: int) -> ResolventExpansion:
    """Right parametrix of Q - lambda through depth J."""
    q = _check_weight_order(Q)
    L = lam(q)
    X = add(Q.component(0), neg(L))
    n = Q.n

    def qk(k):
        return X if k == 0 else Q.component(k)

    shifted_comps = [qk(k) for k in range(J + 1)] if not Q.exact else \
        [X] + list(Q.components[1:])
    shifted = ClassicalSymbol(Q.theta, q, shifted_comps, exact=Q.exact, lam_weight=q)
    b0 = inverse(X)
    bs = [b0]
    for j in range(1, J + 1):
        terms = []
        for g in range(j + 1):
            for k in range(j - g + 1):
                l = j - g - k
                if l == j:
                    continue
                a = qk(k)
                if is_zero(a) or is_zero(bs[l]):
                    continue
                for gamma in _multi_indices(n, g):
                    da = diff_xi_multi(a, gamma)
                    if is_zero(da):
                        continue
                    db = diff_x_multi(bs[l], gamma)
                    if is_zero(db):
                        continue
                    fact = 1.0 / math.prod(math.factorial(x) for x in gamma)
                    terms.append(mul(const(fact), da, db))
        rest = add(*terms)
        bs.append(ZERO if is_zero(rest) else mul(const(-1), b0, rest))
    comps = [HomogeneousComponent(-q - j, b, q) for j, b in enumerate(bs)]
    return ResolventExpansion(Q, q, shifted, comps)


# ---------------------------------------------------------------------------
# powers and logarithms
# ---------------------------------------------------------------------------

def power_symbol(Q: ClassicalSymbol, z, N: int, contour: ContourSpec | None = None,
                 resolved: ResolvedContour | None = None) -> ClassicalSymbol:
    """Components sigma_{qz-j}(Q^z), j = 0..N-1, as contour-integral expressions.

    The closed contour makes the integral convergent for every z, so no
    integer shift is needed for Re z >= 0.
    """
    q = _check_weight_order(Q)
    z = complex(z)
    if resolved is None:
        resolved = resolve_contour(Q, contour)
    R = resolvent_components(Q, N - 1)
    comps = []
    for j in range(N):
        b = R.expr(j)
        comps.append(ZERO if is_zero(b) else
                     contour_integral(b, "pow", z, resolved, q * z - j, q))
    full = None
    if Q.full is not None and Q.full.commutes:
        full = spow(Q.full, z)
    order = _descending(q * z, 0)
    return ClassicalSymbol(Q.theta, order, comps, exact=False, full=full,
                           meta={"contour": resolved, "z": z})


@dataclass
class LogSymbol:
    """sigma(log Q) = q log|xi| + classical order-0 part."""

    q: int
    classical: ClassicalSymbol
    contour: ResolvedContour

    @property
    def theta(self):
        return self.classical.theta

    def marker(self):
        """q log|xi| as a scalar expression (its xi-derivatives are classical)."""
        n = self.classical.n
        return mul(const(0.5 * self.q), slog(norm2_expr(n)))

    def evaluate(self, xi_v, ctx: EvalContext | None = None, depth: int | None = None):
        """Full value q log|xi| + sum of classical components at xi."""
        ctx = ctx or EvalContext(self.theta)
        xi_v = np.asarray(xi_v, float)
        depth = self.classical.depth() if depth is None else depth
        tot = add(*self.classical.components[:depth])
        mc = evaluate_expr(tot, self.theta, xi_v, None, ctx)
        return mc + self.q * math.log(float(np.linalg.norm(xi_v)))


def log_symbol(Q: ClassicalSymbol, N: int, contour: ContourSpec | None = None,
               resolved: ResolvedContour | None = None) -> LogSymbol:
    """Classical part sigma_{-j}(log Q), j = 0..N-1, of the logarithm."""
    q = _check_weight_order(Q)
    if resolved is None:
        resolved = resolve_contour(Q, contour)
    R = resolvent_components(Q, N - 1)
    comps = []
    for j in range(N):
        b = R.expr(j)
        comps.append(ZERO if is_zero(b) else
                     contour_integral(b, "log", None, resolved, -j, q, leading=(j == 0)))
    cl = ClassicalSymbol(Q.theta, 0, comps, exact=False, meta={"contour": resolved})
    return LogSymbol(q, cl, resolved)


def compose_with_log(A: ClassicalSymbol, L: LogSymbol, N: int | None = None) -> ClassicalSymbol:
    """Classical part of sigma(A o log Q).

    delta kills the scalar q log|xi|, so A o log Q = sigma_A q log|xi| +
    A o (classical part); the first term is log-type and carries no
    homogeneous component.
    """
    return compose(A, L.classical, N)


def compose_log_with(L: LogSymbol, B: ClassicalSymbol, N: int | None = None) -> ClassicalSymbol:
    """Classical part of sigma(log Q o B), including xi-derivatives of q log|xi|."""
    cl = compose(L.classical, B, N)
    N = cl.depth()
    marker = L.marker()
    n = B.n
    comps = list(cl.components)
    for j in range(N):
        terms = []
        for g in range(1, j + 1):
            l = j - g
            b = B.component(l)
            if is_zero(b):
                continue
            for gamma in _multi_indices(n, g):
                dm = diff_xi_multi(marker, gamma)
                db = diff_x_multi(b, gamma)
                if is_zero(dm) or is_zero(db):
                    continue
                fact = 1.0 / math.prod(math.factorial(x) for x in gamma)
                terms.append(mul(const(fact), dm, db))
        comps[j] = add(comps[j], *terms)
    return ClassicalSymbol(B.theta, B.order, comps, exact=False)
