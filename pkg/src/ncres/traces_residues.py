"""Residue functionals, cut-off integrals, the canonical trace and zeta pole data.

Normalisation: tau(1) = 1, and the sphere measure carries (2 pi)^{-n}, so
Res(Delta^{-1}) = 1/(2 pi) on T^2.  Operator-level quantities (zeta values,
heat coefficients) carry the explicit factor V = (2 pi)^n.

Multipliers are traced with MultiplierCoefficient.trace_rule: tau(a) tau(b)
on L_a R_b for irrational theta and tau(ab) at theta = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_gegenbauer, roots_legendre

from .errors import InputError, MissingComponentError
from .functional_calculus import (ContourSpec, LogSymbol, compose_with_log, log_symbol,
                                  power_symbol, resolve_contour)
from .nc_algebra import MultiplierCoefficient
from .symbol_calculus import (ZERO, ClassicalSymbol, EvalContext, _is_polynomial, add, compose,
                              const, diff_xi_multi, evaluate_expr, evaluate_scalar, is_zero, mul, nodes,
                              normal_form, spow)


def volume_factor(n: int) -> float:
    """Trace of an operator = V * (residue-normalised integral); V = (2 pi)^n."""
    return (2 * math.pi) ** n


# ---------------------------------------------------------------------------
# sphere quadrature
# ---------------------------------------------------------------------------

# nodes per angle; the product rule has m^(n-1) points
_DEFAULT_NODES = {1: 2, 2: 64, 3: 32, 4: 16}


class SphereQuadrature:
    """Nodes on S^{n-1} with weights summing to vol(S^{n-1}) / (2 pi)^n.

    n = 2 uses the m-point trapezoid rule (exact for trigonometric
    polynomials of degree < m); higher n use Gauss-Gegenbauer rules in the
    polar angles times the trapezoid rule in the azimuth.
    """

    def __init__(self, n: int, m: int | None = None):
        if not 1 <= n <= 4:
            raise InputError(f"dimension must be 1..4, got {n}")
        if m is None:
            m = _DEFAULT_NODES[n]
        self.n = n
        self.m = m
        if n == 1:
            nodes = np.array([[1.0], [-1.0]])
            w = np.array([1.0, 1.0])
        else:
            phi = 2 * np.pi * np.arange(m) / m
            pts = [np.stack([np.cos(phi), np.sin(phi)], axis=1)]
            wts = [np.full(m, 2 * np.pi / m)]
            nodes, w = pts[0], wts[0]
            for k in range(1, n - 1):
                # add one polar angle psi with weight sin^k psi dpsi
                if k == 1:
                    t, tw = roots_legendre(m)
                else:
                    t, tw = roots_gegenbauer(m, k / 2.0)
                s = np.sqrt(1 - t ** 2)
                nodes = np.concatenate([np.kron(s[:, None], nodes.reshape(1, -1)).reshape(-1, nodes.shape[1]),
                                        np.repeat(t, len(w))[:, None]], axis=1)
                w = np.kron(tw, w)
        self.nodes = nodes
        self.weights = w / (2 * np.pi) ** n

    def total(self) -> float:
        return float(self.weights.sum())


_POLY_CACHE: dict = {}


def _polynomial_trace_table(e, theta):
    """Traced monomial table {gamma: coefficient} of a polynomial expression, or None."""
    key = (e.id, theta)
    hit = _POLY_CACHE.get(key)
    if hit is not None or key in _POLY_CACHE:
        return hit
    table = None
    if _is_polynomial(e):
        by_id = {x.id: x for x in nodes(e)}
        table = {}
        for (g, comm, word), v in normal_form(e).items():
            if comm or any(by_id[a].kind != "coef" for a in word):
                table = None
                break
            c = MultiplierCoefficient.identity(theta, v)
            for a in word:
                c = c.compose(by_id[a].data)
            table[g] = table.get(g, 0) + c.trace_rule()
    _POLY_CACHE[key] = table
    return table


def _trace_values(e, theta, pts, ctx: EvalContext):
    """trace_rule of the multiplier value of e at each point."""
    if e.commutes:
        return evaluate_scalar(e, pts)
    table = _polynomial_trace_table(e, theta)
    if table is not None:
        pts = np.asarray(pts, float)
        out = np.zeros(len(pts), np.complex128)
        for g, v in table.items():
            mono = np.prod(pts ** np.asarray(g, float), axis=1) if g else 1.0
            out += v * mono
        return out
    out = np.empty(len(pts), np.complex128)
    for i, p in enumerate(pts):
        out[i] = evaluate_expr(e, theta, p, None, ctx).trace_rule()
    return out


def sphere_trace_integral(e, theta, quad: SphereQuadrature, ctx: EvalContext | None = None
                          ) -> complex:
    if is_zero(e):
        return 0j
    ctx = ctx or EvalContext(theta)
    vals = _trace_values(e, theta, quad.nodes, ctx)
    return complex(np.dot(quad.weights, vals))


# ---------------------------------------------------------------------------
# residues
# ---------------------------------------------------------------------------

def residue(A: ClassicalSymbol, quad: SphereQuadrature | None = None,
            ctx: EvalContext | None = None) -> complex:
    """Res(A) = int_{S^{n-1}} trace(sigma_{-n}(A)) dbar_S xi."""
    n = A.n
    comp = A.component_at_degree(-n)
    if comp is None:
        return 0j
    quad = quad or SphereQuadrature(n)
    return sphere_trace_integral(comp, A.theta, quad, ctx)


@dataclass(frozen=True)
class Regularization:
    """Finite-rank perturbation sum_i w_i |U_{m_i}><U_{m_i}| of the kernel.

    It is smoothing, so symbols do not see it; it enters through the inner
    contour radius, which must stay below every w_i.
    """

    points: tuple = ((0, 0),)
    weights: tuple = (1.0,)

    def floor(self) -> float:
        return 0.5 * min(float(w) for w in self.weights)

    @classmethod
    def kernel_projector(cls, n: int, weight: float = 1.0) -> "Regularization":
        return cls(((0,) * n,), (float(weight),))


def _require_differential(A: ClassicalSymbol, what: str):
    if not A.is_differential():
        raise InputError(f"{what} requires a differential operator A")


def residue_log(A: ClassicalSymbol, Q: ClassicalSymbol, proj: Regularization | None = None,
                contour: ContourSpec | None = None, quad: SphereQuadrature | None = None,
                ctx: EvalContext | None = None, with_error: bool = False):
    """Res(A log Q) from sigma_{-n}(A o log(Q + proj)).

    Only the classical part of log Q contributes: the q log|xi| term times
    sigma_A has no homogeneous component of degree -n.
    """
    _require_differential(A, "residue_log")
    n = A.n
    proj = proj or Regularization.kernel_projector(n)
    ctx = ctx or EvalContext(A.theta, estimate_error=with_error)
    resolved = resolve_contour(Q, contour, ctx, floor=proj.floor())
    depth = A.order + n + 1
    L = log_symbol(Q, depth, resolved=resolved)
    C = compose_with_log(A, L, depth)
    quad = quad or SphereQuadrature(n)
    comp = C.component(A.order + n)
    val = sphere_trace_integral(comp, A.theta, quad, ctx)
    if with_error:
        return val, ctx.quad_error * quad.total()
    return val


# ---------------------------------------------------------------------------
# cut-off integral and canonical trace
# ---------------------------------------------------------------------------

def _ball_points(n, quad, m_rad):
    r, rw = roots_legendre(m_rad)
    r = 0.5 * (r + 1)
    rw = 0.5 * rw
    pts = (r[:, None, None] * quad.nodes[None, :, :]).reshape(-1, n)
    wts = (rw[:, None] * r[:, None] ** (n - 1) * quad.weights[None, :]).reshape(-1)
    return pts, wts


def cutoff_integral(A: ClassicalSymbol, quad: SphereQuadrature | None = None, m_rad: int = 64,
                    ctx: EvalContext | None = None) -> complex:
    """Hadamard finite part of int trace(sigma_A(xi)) dbar xi.

    Unit ball numerically; each homogeneous component of degree m adds
    -(1/(m+n)) int_S sigma_m on the exterior (zero when m + n = 0); the
    remainder full - sum(components) is integrated numerically outside
    the ball and must be of order < -n.
    """
    n = A.n
    quad = quad or SphereQuadrature(n)
    ctx = ctx or EvalContext(A.theta)
    full = A.full
    if full is None:
        if not A.exact:
            raise InputError("cut-off integral needs the full symbol or an exact symbol")
        full = add(*A.components)
    pts, wts = _ball_points(n, quad, m_rad)
    total = complex(np.dot(wts, _trace_values(full, A.theta, pts, ctx)))
    for j, comp in enumerate(A.components):
        if is_zero(comp):
            continue
        m = A.degree_of(j)
        if abs(complex(m) + n) < 1e-12:
            continue
        total += -sphere_trace_integral(comp, A.theta, quad, ctx) / (complex(m) + n)
    if not A.exact:
        rem = A.remainder_order
        if np.real(complex(rem)) >= -n:
            raise InputError(f"remainder order {rem} is not below -{n}; supply more components")
        s, sw = roots_legendre(m_rad)
        s = 0.5 * (s + 1)
        sw = 0.5 * sw
        r = 1.0 / s
        outer = (r[:, None, None] * quad.nodes[None, :, :]).reshape(-1, n)
        rw = (sw[:, None] * s[:, None] ** (-n - 1) * quad.weights[None, :]).reshape(-1)
        tail = _trace_values(full, A.theta, outer, ctx)
        for comp in A.components:
            if not is_zero(comp):
                tail = tail - _trace_values(comp, A.theta, outer, ctx)
        total += complex(np.dot(rw, tail))
    return total


def _box_exterior_factor(n, mn, m_gl=48):
    """Nodes/weights for int_S f(w) |w|_inf^{-(m+n)} dw with kinks resolved (n = 2)."""
    if n == 2:
        x, w = roots_legendre(m_gl)
        segs = []
        wts = []
        for s in range(8):
            a = s * np.pi / 4
            t = a + np.pi / 8 * (x + 1)
            segs.append(np.stack([np.cos(t), np.sin(t)], axis=1))
            wts.append(np.pi / 8 * w)
        pts = np.concatenate(segs)
        ww = np.concatenate(wts)
    else:
        q = SphereQuadrature(n, 96)
        pts, ww = q.nodes, q.weights * (2 * np.pi) ** n
    return pts, ww * np.abs(pts).max(axis=1) ** (-mn)


def _lattice(K, n):
    ax = np.arange(-K, K + 1, dtype=float)
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def lattice_trace(A: ClassicalSymbol, K: int = 200, overrides: dict | None = None,
                  ctx: EvalContext | None = None) -> complex:
    """Finite-part lattice sum sum_k trace(sigma_full(k)), regularised by the components.

    The box sum is completed by the analytically continued exterior
    integrals of the homogeneous components over |xi|_inf > K + 1/2
    (midpoint rule), which removes the divergent K-powers.  ``overrides``
    replaces the summand at listed lattice points.
    """
    n = A.n
    ctx = ctx or EvalContext(A.theta)
    full = A.full if A.full is not None else (add(*A.components) if A.exact else None)
    if full is None:
        raise InputError("lattice trace needs the full symbol")
    pts = _lattice(K, n)
    skip = np.zeros(len(pts), bool)
    extra = 0j
    if overrides:
        for k, v in overrides.items():
            hit = np.nonzero(np.all(pts == np.asarray(k, float), axis=1))[0]
            skip[hit] = True
            extra += v
    vals = _trace_values(full, A.theta, pts[~skip], ctx)
    total = complex(np.sum(np.sort_complex(vals))) + extra
    a = K + 0.5
    if not A.exact:
        for j, comp in enumerate(A.components):
            if is_zero(comp):
                continue
            mn = complex(A.degree_of(j)) + n
            if abs(mn) < 1e-12:
                dirs, ww = _box_exterior_factor(n, 0.0)
                res = np.dot(ww, _trace_values(comp, A.theta, dirs, ctx))
                if abs(res) > 1e-10 * max(1.0, np.dot(ww, np.abs(_trace_values(comp, A.theta, dirs, ctx)))):
                    raise InputError("component of degree -n gives a log divergence")
            total += _exterior(comp, A.theta, n, mn, a, ctx)
            # midpoint-rule corrections: sum over cells of f(m) vs the integral
            for c, gamma in _midpoint_terms(n):
                g = diff_xi_multi(comp, gamma)
                if is_zero(g):
                    continue
                total += c * _exterior(g, A.theta, n, mn - sum(gamma), a, ctx)
    return total


def _midpoint_terms(n):
    """Pairs (c, gamma) with f(0) = int_cell f + sum c int_cell d^gamma f + O(d^6).

    In one dimension f(0) = int f - (1/24) int f'' + (7/5760) int f''''.
    """
    out = []
    for i in range(n):
        out.append((-1 / 24, tuple(2 if p == i else 0 for p in range(n))))
        out.append((7 / 5760, tuple(4 if p == i else 0 for p in range(n))))
        for j in range(i + 1, n):
            out.append((1 / 576, tuple(2 if p in (i, j) else 0 for p in range(n))))
    return out


def _exterior(g, theta, n, mn, a, ctx):
    """Finite part of the integral of trace(g) over |xi|_inf > a, g of degree mn - n."""
    if abs(mn) < 1e-12:
        dirs, ww = _box_exterior_factor(n, 0.0)
        sv = _trace_values(g, theta, dirs, ctx)
        return complex(np.dot(ww, sv * np.log(np.abs(dirs).max(axis=1) / a)))
    dirs, ww = _box_exterior_factor(n, mn)
    sv = _trace_values(g, theta, dirs, ctx)
    return -(a ** mn) / mn * complex(np.dot(ww, sv))


def canonical_trace(A: ClassicalSymbol, K: int = 200, overrides: dict | None = None,
                    ctx: EvalContext | None = None) -> complex:
    """TR(A) for non-integer order or order < -n, as a finite-part lattice sum."""
    n = A.n
    o = complex(A.order)
    integer = abs(o.imag) < 1e-12 and abs(o.real - round(o.real)) < 1e-12
    if integer and o.real >= -n:
        raise InputError(f"TR is undefined at integer order {A.order} >= -{n}")
    return lattice_trace(A, K, overrides, ctx)


# ---------------------------------------------------------------------------
# zeta functions
# ---------------------------------------------------------------------------

@dataclass
class ZetaReport:
    q: int
    a: float
    n: int
    poles: list = field(default_factory=list)        # dicts: d, residue, error
    grid: list = field(default_factory=list)         # dicts: z, value, error or note
    finite_parts: list = field(default_factory=list)  # dicts: z, fp, error
    value_at_zero: complex | None = None

    def pole_locations(self):
        return [p["d"] for p in self.poles]

    def to_records(self) -> list:
        out = []
        for p in self.poles:
            out.append({"kind": "pole", "z": _num(p["d"]), "residue_re": p["residue"].real,
                        "residue_im": p["residue"].imag, "error": p["error"]})
        for g in self.finite_parts:
            out.append({"kind": "finite_part", "z": _num(g["z"]), "fp_re": g["fp"].real,
                        "fp_im": g["fp"].imag, "error": g["error"]})
        if self.value_at_zero is not None:
            out.append({"kind": "value_at_zero", "z": 0.0, "fp_re": self.value_at_zero.real,
                        "fp_im": self.value_at_zero.imag, "error": None})
        return out

    def to_table(self) -> str:
        lines = ["z_re\tz_im\tvalue_re\tvalue_im\terror\tnote"]
        for g in self.grid:
            z = complex(g["z"])
            v = g.get("value")
            if v is None:
                lines.append(f"{z.real:.12g}\t{z.imag:.12g}\tnan\tnan\tnan\t{g.get('note', '')}")
            else:
                lines.append(f"{z.real:.12g}\t{z.imag:.12g}\t{v.real:.15g}\t{v.imag:.15g}\t"
                             f"{g.get('error', 0.0):.3g}\t")
        return "\n".join(lines) + "\n"


def _num(z):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


def pole_list(a, n, q, count):
    return [(complex(a) + n - j) / q for j in range(count)]


def zeta(A: ClassicalSymbol, Q: ClassicalSymbol, z_grid=None, n_poles: int = 3,
         finite_parts=(), proj: Regularization | None = None, contour: ContourSpec | None = None,
         K: int = 200, quad: SphereQuadrature | None = None) -> ZetaReport:
    """Pole data and grid values of zeta(A, Q)(z) = TR(A Q^{-z}).

    The residue at d_j is V (1/q) Res(A o Q^{-d_j}).  Grid values need a
    scalar full symbol for Q (constant coefficients); other grids are
    annotated and skipped.
    """
    n = A.n
    q = Q.order
    a = A.order
    V = volume_factor(n)
    proj = proj or Regularization.kernel_projector(n)
    ctx = EvalContext(A.theta, estimate_error=True)
    resolved = resolve_contour(Q, contour, ctx, floor=proj.floor())
    quad = quad or SphereQuadrature(n)
    rep = ZetaReport(q, a, n)
    for j, d in enumerate(pole_list(a, n, q, n_poles)):
        ctx.quad_error = 0.0
        P = power_symbol(Q, -d, j + 1, resolved=resolved)
        C = compose(A, P, j + 1)
        r = residue(C, quad, ctx)
        d_out = d.real if abs(d.imag) < 1e-15 else d
        rep.poles.append({"d": d_out, "residue": V * r / q,
                          "error": V * ctx.quad_error * quad.total() / q})
    grid_ok = Q.full is not None and Q.full.commutes and A.is_differential()

    def pole_residue(j, d):
        if j < len(rep.poles):
            return rep.poles[j]["residue"]
        P = power_symbol(Q, -d, j + 1, resolved=resolved)
        return V * residue(compose(A, P, j + 1), quad, ctx) / q

    for z in (z_grid if z_grid is not None else []):
        z = complex(z)
        hits = [(j, d) for j, d in enumerate(pole_list(a, n, q, 64)) if abs(z - d) < 1e-9]
        # a candidate pole with vanishing residue is a regular point
        if any(abs(pole_residue(j, d)) > 1e-10 for j, d in hits):
            rep.grid.append({"z": z, "value": None, "note": "pole skipped"})
            continue
        if not grid_ok:
            rep.grid.append({"z": z, "value": None, "note": "needs a scalar full symbol"})
            continue
        v, err = _zeta_lattice(A, Q, z, proj, K, ctx)
        rep.grid.append({"z": z, "value": v, "error": err})
    for z in finite_parts:
        z = complex(z)
        if abs(z) < 1e-14 and A.is_differential():
            v = zeta_at_zero(A, Q, proj, contour, quad)
            rep.finite_parts.append({"z": z, "fp": v, "error": ctx.quad_error})
            continue
        if not grid_ok:
            rep.finite_parts.append({"z": z, "fp": complex("nan"), "error": float("inf")})
            continue
        fp, err = _finite_part_numeric(A, Q, z, proj, K, ctx)
        rep.finite_parts.append({"z": z, "fp": fp, "error": err})
    if A.is_differential():
        rep.value_at_zero = zeta_at_zero(A, Q, proj, contour, quad)
    return rep


def _zeta_lattice(A, Q, z, proj, K, ctx):
    """TR(A Q^{-z}) by the regularised lattice sum (scalar full symbol of Q)."""
    n = A.n
    q = Q.order
    z = complex(z)
    full = mul(A.full if A.full is not None else add(*A.components), spow(Q.full, -z))
    depth = max(1, int(math.floor(np.real(complex(A.order) - q * z) + n)) + 2)
    Qs = ClassicalSymbol(Q.theta, Q.order, Q.components, exact=True, full=Q.full)
    # homogeneous expansion of sigma_A * sigma_Q^{-z} for a scalar polynomial Q
    P = _scalar_power_components(Qs, -z, depth)
    C = compose(A, P, depth)
    C = ClassicalSymbol(A.theta, C.order, C.components, exact=False, full=full)
    overrides = {}
    for pt, w in zip(proj.points, proj.weights):
        pt = tuple(pt)
        a_val = _trace_values(A.full if A.full is not None else add(*A.components), A.theta,
                              np.array([pt], float), ctx)[0]
        overrides[pt] = a_val * complex(w) ** (-z)
    v1 = lattice_trace(C, K, overrides, ctx)
    v2 = lattice_trace(C, K // 2, overrides, ctx)
    return v1, abs(v1 - v2)


def _scalar_power_components(Q: ClassicalSymbol, z, depth):
    """Homogeneous components of sigma_Q^z for a scalar polynomial symbol (binomial series)."""
    lead = Q.component(0)
    q = Q.order
    lower = [Q.component(k) for k in range(1, q + 1)]
    # sigma^z = lead^z (1 + u)^z with u = sum_k lower_k / lead, u_k homogeneous of degree -k
    u = [mul(c, spow(lead, -1)) if not is_zero(c) else ZERO for c in lower]
    # coefficients of (1 + u)^z expanded by total degree
    powers = {0: {0: const(1)}}  # powers[m][deg] = homogeneous part of u^m
    for m in range(1, depth):
        prev = powers[m - 1]
        cur = {}
        for d0, e0 in prev.items():
            for k, uk in enumerate(u, start=1):
                if is_zero(uk):
                    continue
                d = d0 + k
                if d >= depth:
                    continue
                cur[d] = add(cur.get(d, ZERO), mul(e0, uk))
        powers[m] = cur
    out = []
    for d in range(depth):
        terms = []
        for m in range(0, d + 1):
            part = powers.get(m, {}).get(d)
            if part is None:
                continue
            terms.append(mul(const(_binom(z, m)), part))
        out.append(mul(spow(lead, z), add(*terms)))
    return ClassicalSymbol(Q.theta, complex(q) * z, out, exact=False, full=spow(Q.full, z))


def _binom(z, m):
    out = 1 + 0j
    for i in range(m):
        out *= (z - i) / (i + 1)
    return out


def _finite_part_numeric(A, Q, z, proj, K, ctx, h=1e-3):
    """Finite part at z by symmetric differences, Richardson-extrapolated."""
    def sym(hh):
        a, _ = _zeta_lattice(A, Q, z + hh, proj, K, ctx)
        b, _ = _zeta_lattice(A, Q, z - hh, proj, K, ctx)
        return 0.5 * (a + b)
    f1 = sym(h)
    f2 = sym(h / 2)
    fp = (4 * f2 - f1) / 3
    return fp, abs(f2 - f1)


def zeta_at_zero(A: ClassicalSymbol, Q: ClassicalSymbol, proj: Regularization | None = None,
                 contour: ContourSpec | None = None, quad: SphereQuadrature | None = None
                 ) -> complex:
    """zeta(A, Q)(0) = -(1/q) V Res(A log Q) for differential A."""
    if not A.is_differential():
        raise InputError("zeta_at_zero takes differential A; use zeta(..., finite_parts=[0])")
    q = Q.order
    return -volume_factor(A.n) * residue_log(A, Q, proj, contour, quad) / q
