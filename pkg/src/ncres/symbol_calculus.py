"""Classical symbols as expression trees in xi with multiplier-valued scalars.

Nodes are interned: structurally equal trees share one integer id, which
makes structural equality, hashing and the X * X^{-1} cancellation cheap.
Evaluation at (xi, lambda) produces a MultiplierCoefficient, batched over
lambda, with truncated element inversion for Inverse nodes.

Quantization convention: Op(sigma) U_m = sigma(m) U_m, so composition reads
sigma(AB) ~ sum_gamma (1/gamma!) d_xi^gamma sigma_A . delta^gamma sigma_B.
"""
from __future__ import annotations

import itertools
import math
import os
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (EllipticityError, InputError, MissingComponentError, SingularElementError)
from .nc_algebra import (ElementSpectrum, MultiplierCoefficient, NCElement, ThetaMatrix,
                         _as_theta, _canonical)

# ---------------------------------------------------------------------------
# interned expression nodes
# ---------------------------------------------------------------------------

_INTERN: dict = {}
_LOCK = threading.Lock()


class SymbolExpr:
    """Immutable expression node; build through the helper constructors below."""

    __slots__ = ("id", "kind", "children", "data", "commutes", "_deg", "_dxi", "_dx")

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __repr__(self):
        return to_string(self)

    def __reduce__(self):
        raise TypeError("expression nodes are interned; serialize components instead")


def _node(kind, children=(), data=None, commutes=False, key_data=None):
    key = (kind, tuple(c.id for c in children), key_data if key_data is not None else data)
    with _LOCK:
        hit = _INTERN.get(key)
        if hit is not None:
            return hit
        e = SymbolExpr()
        e.id = len(_INTERN)
        e.kind = kind
        e.children = tuple(children)
        e.data = data
        e.commutes = commutes
        e._deg = _UNSET
        e._dxi = {}
        e._dx = {}
        _INTERN[key] = e
        return e


_UNSET = object()


def const(c) -> SymbolExpr:
    c = complex(c)
    return _node("const", data=c, commutes=True)


ZERO = const(0)
ONE = const(1)


def xi(gamma) -> SymbolExpr:
    gamma = tuple(int(g) for g in gamma)
    if any(g < 0 for g in gamma):
        raise InputError("negative multi-index")
    return _node("xi", data=gamma, commutes=True)


def lam(q: int = 1) -> SymbolExpr:
    """The resolvent parameter, carrying homogeneity weight q."""
    return _node("lam", data=int(q), commutes=True)


def coef(c) -> SymbolExpr:
    """Multiplier-valued constant; identity multiples collapse to const."""
    if isinstance(c, NCElement):
        c = MultiplierCoefficient.left(c)
    if not isinstance(c, MultiplierCoefficient):
        return const(c)
    if c.batched:
        raise InputError("batched multipliers cannot be symbol coefficients")
    if c.is_zero():
        return ZERO
    if not np.any(c.keys):
        return const(c.vals[0])
    return _node("coef", data=c, key_data=(c.digest(), c.n), commutes=False)


def _lift(x) -> SymbolExpr:
    if isinstance(x, SymbolExpr):
        return x
    return coef(x)


def add(*terms) -> SymbolExpr:
    flat = []
    c0 = 0j
    for t in terms:
        t = _lift(t)
        if t.kind == "sum":
            for u in t.children:
                if u.kind == "const":
                    c0 += u.data
                else:
                    flat.append(u)
        elif t.kind == "const":
            c0 += t.data
        else:
            flat.append(t)
    if c0 != 0:
        flat.append(const(c0))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return _node("sum", flat, commutes=all(t.commutes for t in flat))


def neg(e: SymbolExpr) -> SymbolExpr:
    return mul(const(-1), e)


def mul(*factors) -> SymbolExpr:
    """Ordered product; scalar (identity-valued) factors are pulled to the front."""
    flat = []
    for f in factors:
        f = _lift(f)
        if f.kind == "prod":
            flat.extend(f.children)
        else:
            flat.append(f)
    c0 = 1 + 0j
    gamma = None
    front = []
    rest = []
    for f in flat:
        if f.kind == "const":
            c0 *= f.data
        elif f.kind == "xi":
            gamma = f.data if gamma is None else tuple(a + b for a, b in zip(gamma, f.data))
        elif f.commutes:
            front.append(f)
        else:
            rest.append(f)
    if c0 == 0:
        return ZERO
    # cancel X X^{-1} among commuting factors
    front = _cancel_commuting(front)
    rest = _cancel_adjacent(rest)
    front.sort(key=lambda f: f.id)
    out = []
    if c0 != 1:
        out.append(const(c0))
    if gamma is not None and any(gamma):
        out.append(xi(gamma))
    out.extend(front)
    out.extend(rest)
    if not out:
        return ONE
    if len(out) == 1:
        return out[0]
    return _node("prod", out, commutes=not rest)


def _cancel_commuting(fs):
    fs = list(fs)
    changed = True
    while changed:
        changed = False
        ids = {f.id: i for i, f in enumerate(fs)}
        for i, f in enumerate(fs):
            if f.kind == "inv" and f.children[0].id in ids:
                j = ids[f.children[0].id]
                fs = [g for k, g in enumerate(fs) if k not in (i, j)]
                changed = True
                break
    return fs


def _cancel_adjacent(fs):
    out = []
    for f in fs:
        if out and ((f.kind == "inv" and f.children[0].id == out[-1].id)
                    or (out[-1].kind == "inv" and out[-1].children[0].id == f.id)):
            out.pop()
            continue
        out.append(f)
    return out


def inverse(e: SymbolExpr) -> SymbolExpr:
    e = _lift(e)
    if e.kind == "const":
        if e.data == 0:
            raise InputError("inverse of zero")
        return const(1 / e.data)
    if e.kind == "inv":
        return e.children[0]
    return _node("inv", [e], commutes=e.commutes)


def spow(e: SymbolExpr, p) -> SymbolExpr:
    """Principal power of a scalar (identity-valued) expression."""
    e = _lift(e)
    if not e.commutes:
        raise InputError("scalar powers are restricted to commutative sub-expressions")
    p = complex(p)
    if p == 0:
        return ONE
    if p == 1:
        return e
    if e.kind == "const":
        return const(e.data ** p)
    if e.kind == "pow":
        return spow(e.children[0], e.data * p)
    return _node("pow", [e], data=p, commutes=True)


def slog(e: SymbolExpr) -> SymbolExpr:
    e = _lift(e)
    if not e.commutes:
        raise InputError("scalar logarithms are restricted to commutative sub-expressions")
    return _node("log", [e], commutes=True)


def norm2_expr(n: int) -> SymbolExpr:
    """|xi|^2 in dimension n."""
    return add(*[xi(tuple(2 if p == j else 0 for p in range(n))) for j in range(n)])


def contour_integral(child: SymbolExpr, kind: str, z, contour, degree, q: int,
                     leading: bool = False) -> SymbolExpr:
    """-(1/2 pi i) oint w(lambda) child(xi, lambda) dlambda, w = lambda^z or log lambda.

    Evaluated on the unit sphere and rescaled by |xi|^degree.  For the log
    kind only the classical part is produced: the q log|xi| term of the
    leading component is carried separately as a marker.
    """
    if kind not in ("pow", "log"):
        raise InputError(f"unknown contour weight {kind!r}")
    data = (kind, complex(z) if z is not None else None, contour, complex(degree), int(q),
            bool(leading))
    key = (kind, data[1], contour.key(), data[3], data[4], data[5])
    return _node("cint", [child], data=data, key_data=key, commutes=child.commutes)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def degree(e: SymbolExpr):
    """Homogeneity degree (lambda at its weight) or None when inhomogeneous."""
    if e._deg is not _UNSET:
        return e._deg
    k = e.kind
    if k == "const":
        d = None if e.data == 0 else 0
    elif k == "coef":
        d = 0
    elif k == "xi":
        d = sum(e.data)
    elif k == "lam":
        d = e.data
    elif k == "sum":
        ds = {degree(c) for c in e.children}
        d = ds.pop() if len(ds) == 1 else None
    elif k == "prod":
        d = 0
        for c in e.children:
            dc = degree(c)
            if dc is None:
                d = None
                break
            d = d + dc
    elif k == "inv":
        dc = degree(e.children[0])
        d = None if dc is None else -dc
    elif k == "pow":
        dc = degree(e.children[0])
        d = None if dc is None else e.data * dc
    elif k == "log":
        d = None
    elif k == "cint":
        d = e.data[3]
    else:  # pragma: no cover
        raise InputError(f"unknown node {k}")
    if d is not None and isinstance(d, complex) and d.imag == 0:
        d = d.real
        if float(d).is_integer():
            d = int(d)
    e._deg = d
    return d


def is_zero(e: SymbolExpr) -> bool:
    return e.kind == "const" and e.data == 0


def nodes(e: SymbolExpr):
    """All distinct nodes of the DAG below e (including e)."""
    seen = {}
    stack = [e]
    while stack:
        x = stack.pop()
        if x.id in seen:
            continue
        seen[x.id] = x
        stack.extend(x.children)
    return list(seen.values())


def to_string(e: SymbolExpr, depth: int = 0) -> str:
    k = e.kind
    if depth > 6:
        return "..."
    if k == "const":
        c = e.data
        return f"{c.real:g}" if c.imag == 0 else f"({c:g})"
    if k == "coef":
        return f"C[{len(e.data.keys)}]"
    if k == "xi":
        parts = [f"xi{j + 1}^{g}" if g > 1 else f"xi{j + 1}" for j, g in enumerate(e.data) if g]
        return "*".join(parts) if parts else "1"
    if k == "lam":
        return "lam"
    if k == "sum":
        return "(" + " + ".join(to_string(c, depth + 1) for c in e.children) + ")"
    if k == "prod":
        return "*".join(to_string(c, depth + 1) for c in e.children)
    if k == "inv":
        return "inv(" + to_string(e.children[0], depth + 1) + ")"
    if k == "pow":
        return f"pow({to_string(e.children[0], depth + 1)}, {e.data:g})"
    if k == "log":
        return f"log({to_string(e.children[0], depth + 1)})"
    if k == "cint":
        return f"cint[{e.data[0]}]({to_string(e.children[0], depth + 1)})"
    return k


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

def diff_xi(e: SymbolExpr, i: int) -> SymbolExpr:
    """Exact d/dxi_i (directions are 1-based); noncommutative quotient rule for inverses."""
    hit = e._dxi.get(i)
    if hit is not None:
        return hit
    k = e.kind
    if k in ("const", "coef", "lam"):
        out = ZERO
    elif k == "xi":
        g = e.data
        if i > len(g):
            raise InputError(f"direction {i} exceeds dimension {len(g)}")
        if g[i - 1] == 0:
            out = ZERO
        else:
            h = list(g)
            h[i - 1] -= 1
            out = mul(const(g[i - 1]), xi(h))
    elif k == "sum":
        out = add(*[diff_xi(c, i) for c in e.children])
    elif k == "prod":
        terms = []
        fs = e.children
        for j, f in enumerate(fs):
            d = diff_xi(f, i)
            if not is_zero(d):
                terms.append(mul(*fs[:j], d, *fs[j + 1:]))
        out = add(*terms)
    elif k == "inv":
        d = diff_xi(e.children[0], i)
        out = ZERO if is_zero(d) else mul(const(-1), e, d, e)
    elif k == "pow":
        c = e.children[0]
        d = diff_xi(c, i)
        out = ZERO if is_zero(d) else mul(const(e.data), spow(c, e.data - 1), d)
    elif k == "log":
        c = e.children[0]
        d = diff_xi(c, i)
        out = ZERO if is_zero(d) else mul(inverse(c), d)
    elif k == "cint":
        kind, z, contour, deg, q, leading = e.data
        d = diff_xi(e.children[0], i)
        out = ZERO if is_zero(d) else contour_integral(d, kind, z, contour, deg - 1, q)
        if kind == "log" and leading:
            n = contour.n
            gamma = tuple(1 if p == i - 1 else 0 for p in range(n))
            out = add(out, mul(const(-q), xi(gamma), inverse(norm2_expr(n))))
    else:  # pragma: no cover
        raise InputError(f"unknown node {k}")
    e._dxi[i] = out
    return out


def diff_x(e: SymbolExpr, j: int) -> SymbolExpr:
    """The derivation delta_j applied to the multiplier coefficients of e."""
    hit = e._dx.get(j)
    if hit is not None:
        return hit
    k = e.kind
    if e.commutes:
        out = ZERO
    elif k == "coef":
        out = coef(e.data.derive(j))
    elif k == "sum":
        out = add(*[diff_x(c, j) for c in e.children])
    elif k == "prod":
        terms = []
        fs = e.children
        for t, f in enumerate(fs):
            d = diff_x(f, j)
            if not is_zero(d):
                terms.append(mul(*fs[:t], d, *fs[t + 1:]))
        out = add(*terms)
    elif k == "inv":
        d = diff_x(e.children[0], j)
        out = ZERO if is_zero(d) else mul(const(-1), e, d, e)
    elif k == "cint":
        kind, z, contour, deg, q, leading = e.data
        d = diff_x(e.children[0], j)
        out = ZERO if is_zero(d) else contour_integral(d, kind, z, contour, deg, q)
    else:  # pragma: no cover
        raise InputError(f"delta of node {k}")
    e._dx[j] = out
    return out


def diff_xi_multi(e: SymbolExpr, gamma) -> SymbolExpr:
    for i, g in enumerate(gamma):
        for _ in range(g):
            e = diff_xi(e, i + 1)
            if is_zero(e):
                return e
    return e


def diff_x_multi(e: SymbolExpr, gamma) -> SymbolExpr:
    for j, g in enumerate(gamma):
        for _ in range(g):
            e = diff_x(e, j + 1)
            if is_zero(e):
                return e
    return e


# ---------------------------------------------------------------------------
# normal form
# ---------------------------------------------------------------------------

def _expand(e: SymbolExpr, memo):
    """Sum of monomials keyed by (xi exponent, sorted commuting atoms, ordered word)."""
    hit = memo.get(e.id)
    if hit is not None:
        return hit
    k = e.kind
    if k == "const":
        out = {} if e.data == 0 else {((), (), ()): e.data}
    elif k == "xi":
        out = {(e.data, (), ()): 1.0}
    elif k == "sum":
        out = {}
        for c in e.children:
            for key, v in _expand(c, memo).items():
                out[key] = out.get(key, 0) + v
    elif k == "prod":
        out = {((), (), ()): 1.0}
        for c in e.children:
            right = _expand(c, memo)
            new = {}
            for (g1, c1, w1), v1 in out.items():
                for (g2, c2, w2), v2 in right.items():
                    key = (_gadd(g1, g2), tuple(sorted(c1 + c2)), w1 + w2)
                    new[key] = new.get(key, 0) + v1 * v2
            out = new
    elif e.commutes:
        out = {((), (e.id,), ()): 1.0}
    else:
        out = {((), (), (e.id,)): 1.0}
    memo[e.id] = out
    return out


def _gadd(a, b):
    if not a:
        return b
    if not b:
        return a
    return tuple(x + y for x, y in zip(a, b))


def normal_form(e: SymbolExpr, tol: float = 0.0) -> dict:
    """Monomial table of e; entries with |coefficient| <= tol are removed."""
    out = {}
    for (g, c, w), v in _expand(e, {}).items():
        key = (g if any(g) else (), c, w)
        out[key] = out.get(key, 0) + v
    return {k: v for k, v in out.items() if abs(v) > tol}


def normalize(e: SymbolExpr, tol: float = 1e-13) -> SymbolExpr:
    """Canonical re-expansion of e as a sum of ordered monomials."""
    table = normal_form(e, tol)
    by_id = {x.id: x for x in nodes(e)}
    terms = []
    for (g, c, w), v in sorted(table.items(), key=lambda kv: (kv[0][2], kv[0][1], kv[0][0])):
        fs = [const(v)]
        if g:
            fs.append(xi(g))
        fs.extend(by_id[a] for a in c)
        fs.extend(by_id[a] for a in w)
        terms.append(mul(*fs))
    return add(*terms)


def is_symbolic_zero(e: SymbolExpr, tol: float = 1e-12) -> bool:
    return not normal_form(e, tol)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

class _Val:
    """Batched multiplier value: keys (N, 2n), vals (B, N); scalar when only the identity key."""

    __slots__ = ("keys", "vals", "scalar")

    def __init__(self, keys, vals, scalar=False):
        self.keys = keys
        self.vals = vals
        self.scalar = scalar


@dataclass
class EvalContext:
    """Truncation settings and scratch space for one evaluation sweep.

    ``support`` bounds both halves of every multiplier key; ``radius`` is the
    compression radius of element spectra used by Inverse nodes.
    """

    theta: ThetaMatrix
    support: int = 24
    radius: int = 40
    estimate_error: bool = False
    dropped: float = 0.0
    quad_error: float = 0.0
    _spectra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = _as_theta(self.theta)
        n = self.theta.n
        self._doubled = self.theta.doubled()
        self._lo = np.full(2 * n, -self.support, np.int64)
        self._hi = np.full(2 * n, self.support, np.int64)
        self._zero_key = np.zeros((1, 2 * n), np.int64)

    def spectrum(self, x: NCElement) -> ElementSpectrum:
        key = np.round(x.vals, 13).tobytes() + x.keys.tobytes()
        sp_ = self._spectra.get(key)
        if sp_ is None:
            sp_ = ElementSpectrum(x, self.radius)
            self._spectra[key] = sp_
        return sp_


def _scalar_val(ctx, v) -> _Val:
    v = np.asarray(v, np.complex128).reshape(-1, 1)
    return _Val(ctx._zero_key, v, True)


def _v_add(ctx, vals: list) -> _Val:
    if all(v.scalar for v in vals):
        B = max(v.vals.shape[0] for v in vals)
        tot = np.zeros((B, 1), np.complex128)
        for v in vals:
            tot = tot + v.vals
        return _Val(ctx._zero_key, tot, True)
    B = max(v.vals.shape[0] for v in vals)
    keys = np.concatenate([v.keys for v in vals])
    cols = [np.broadcast_to(v.vals, (B, v.vals.shape[1])) for v in vals]
    k, w = _canonical(keys, np.concatenate(cols, axis=1))
    if k.shape[0] == 0:
        return _Val(ctx._zero_key, np.zeros((B, 1), np.complex128), True)
    return _Val(k, w, False)


def _v_mul(ctx, a: _Val, b: _Val) -> _Val:
    if a.scalar and b.scalar:
        return _Val(ctx._zero_key, a.vals * b.vals, True)
    if a.scalar:
        return _Val(b.keys, a.vals * b.vals, False)
    if b.scalar:
        return _Val(a.keys, a.vals * b.vals, False)
    k, v = _kernels.twisted_product(a.keys, a.vals, b.keys, b.vals, ctx._doubled, ctx._lo,
                                    ctx._hi)
    if k.shape[0] == 0:
        B = max(a.vals.shape[0], b.vals.shape[0])
        return _Val(ctx._zero_key, np.zeros((B, 1), np.complex128), True)
    return _Val(k, v, False)


def _v_inverse(ctx, v: _Val) -> _Val:
    if v.scalar:
        if np.any(v.vals == 0):
            raise SingularElementError("scalar symbol vanishes", 0.0)
        return _Val(ctx._zero_key, 1.0 / v.vals, True)
    n = ctx.theta.n
    keys = v.keys
    left_only = not np.any(keys[:, n:])
    right_only = not np.any(keys[:, :n])
    if not (left_only or right_only):
        raise InputError("inverse of a mixed left/right multiplier has no finite multiplier form")
    half = keys[:, :n] if left_only else keys[:, n:]
    idx0 = np.nonzero(~np.any(half, axis=1))[0]
    B = v.vals.shape[0]
    s = v.vals[:, idx0[0]] if len(idx0) else np.zeros(B, np.complex128)
    mask = np.any(half, axis=1)
    X = v.vals[:, mask]
    xk = half[mask]
    # proportional rows X_b = alpha_b x share one spectrum
    j = int(np.argmax(np.abs(X).sum(axis=1)))
    x = X[j]
    p = int(np.argmax(np.abs(x)))
    x = x / x[p]
    alpha = X[:, p]
    prop = np.abs(X - alpha[:, None] * x[None, :]).max() <= 1e-12 * max(1.0, np.abs(X).max())
    outs = []
    if prop and np.all(alpha != 0):
        el = NCElement(ctx.theta, xk, x, _canonical_form=True)
        sp_ = ctx.spectrum(el)
        coeffs = sp_.resolvent(s / alpha) / alpha[:, None]
        pts = sp_.points
    else:
        coeffs = []
        pts = None
        for b in range(B):
            el = NCElement(ctx.theta, xk, X[b], _canonical_form=True)
            sp_ = ctx.spectrum(el)
            if pts is None:
                pts = sp_.points
            elif not np.array_equal(pts, sp_.points):
                raise InputError("batched inverse operands with differing supports")
            coeffs.append(sp_.resolvent([s[b]])[0])
        coeffs = np.array(coeffs)
    inside = np.all(np.abs(pts) <= ctx.support, axis=1)
    if not inside.all():
        ctx.dropped = max(ctx.dropped, float(np.abs(coeffs[:, ~inside]).sum(axis=1).max()))
    pts = pts[inside]
    coeffs = coeffs[:, inside]
    zeros = np.zeros_like(pts)
    full = np.concatenate([pts, zeros], axis=1) if left_only else np.concatenate([zeros, pts],
                                                                                axis=1)
    order = np.lexsort(full.T[::-1])
    return _Val(full[order], np.ascontiguousarray(coeffs[:, order]), False)


def _eval(e: SymbolExpr, ctx: EvalContext, xi_v: np.ndarray, lam_v, memo) -> _Val:
    hit = memo.get(e.id)
    if hit is not None:
        return hit
    k = e.kind
    if k == "const":
        out = _scalar_val(ctx, e.data)
    elif k == "coef":
        mc = e.data
        if mc.theta != ctx.theta:
            raise InputError("coefficient theta differs from evaluation theta")
        out = _Val(mc.keys, mc._v, False)
    elif k == "xi":
        out = _scalar_val(ctx, np.prod(xi_v ** np.array(e.data)))
    elif k == "lam":
        if lam_v is None:
            raise InputError("expression depends on lambda but none was supplied")
        out = _scalar_val(ctx, lam_v)
    elif k == "sum":
        out = _v_add(ctx, [_eval(c, ctx, xi_v, lam_v, memo) for c in e.children])
    elif k == "prod":
        out = _eval(e.children[0], ctx, xi_v, lam_v, memo)
        for c in e.children[1:]:
            out = _v_mul(ctx, out, _eval(c, ctx, xi_v, lam_v, memo))
    elif k == "inv":
        out = _v_inverse(ctx, _eval(e.children[0], ctx, xi_v, lam_v, memo))
    elif k == "pow":
        c = _eval(e.children[0], ctx, xi_v, lam_v, memo)
        if not c.scalar:
            raise InputError("scalar power of a non-scalar value")
        out = _scalar_val(ctx, c.vals[:, 0] ** e.data)
    elif k == "log":
        c = _eval(e.children[0], ctx, xi_v, lam_v, memo)
        if not c.scalar:
            raise InputError("scalar log of a non-scalar value")
        out = _scalar_val(ctx, np.log(c.vals[:, 0]))
    elif k == "cint":
        out = _eval_cint(e, ctx, xi_v)
    else:  # pragma: no cover
        raise InputError(f"unknown node {k}")
    memo[e.id] = out
    return out


def _cint_once(e, ctx, xhat, refine):
    kind, z, contour, deg, q, leading = e.data
    lam_nodes, dlam, loglam = contour.quadrature(refine)
    w = np.exp(z * loglam) if kind == "pow" else loglam
    child = _eval(e.children[0], ctx, xhat, lam_nodes, {})
    vals = np.broadcast_to(child.vals, (len(lam_nodes), child.vals.shape[1]))
    integral = -(w * dlam) @ vals / (2j * np.pi)
    return child.keys, integral.reshape(1, -1), child.scalar


def _eval_cint(e, ctx, xi_v):
    kind, z, contour, deg, q, leading = e.data
    r = float(np.linalg.norm(xi_v))
    if r == 0:
        raise InputError("homogeneous component evaluated at xi = 0")
    xhat = xi_v / r
    keys, val, scalar = _cint_once(e, ctx, xhat, False)
    if ctx.estimate_error:
        k2, v2, _ = _cint_once(e, ctx, xhat, True)
        a = dict(zip(map(tuple, keys.tolist()), val[0]))
        b = dict(zip(map(tuple, k2.tolist()), v2[0]))
        diff = max((abs(a.get(t, 0) - b.get(t, 0)) for t in set(a) | set(b)), default=0.0)
        ctx.quad_error = max(ctx.quad_error, float(diff) * r ** float(np.real(deg)))
    scale = r ** deg if r != 1 else 1.0
    return _Val(keys, val * scale, scalar)


def _to_mc(ctx, v: _Val, batched: bool) -> MultiplierCoefficient:
    vals = v.vals if batched else v.vals[0]
    return MultiplierCoefficient(ctx.theta, v.keys, vals, batched=batched,
                                 _canonical_form=not ctx.theta.is_zero)


def evaluate_expr(e: SymbolExpr, theta, xi_v, lam_v=None, ctx: EvalContext | None = None
                  ) -> MultiplierCoefficient:
    """Evaluate an expression at one xi; lam_v may be a scalar or a 1-d batch."""
    if ctx is None:
        ctx = EvalContext(theta)
    xi_v = np.asarray(xi_v, dtype=float).reshape(-1)
    if xi_v.shape[0] != ctx.theta.n:
        raise InputError(f"xi has dimension {xi_v.shape[0]}, expected {ctx.theta.n}")
    batched = lam_v is not None and np.ndim(lam_v) > 0
    lv = None if lam_v is None else np.atleast_1d(np.asarray(lam_v, np.complex128))
    val = _eval(e, ctx, xi_v, lv, {})
    if batched and val.vals.shape[0] == 1 and len(lv) > 1:
        val = _Val(val.keys, np.repeat(val.vals, len(lv), axis=0), val.scalar)
    return _to_mc(ctx, val, batched)


_CINT_BLOCK = 1 << 18


def evaluate_scalar(e: SymbolExpr, xi_pts, lam_pts=None) -> np.ndarray:
    """Vectorised evaluation of an identity-valued expression over many points."""
    xi_pts = np.atleast_2d(np.asarray(xi_pts, dtype=float))
    P = xi_pts.shape[0]
    lam_pts = None if lam_pts is None else np.broadcast_to(
        np.asarray(lam_pts, np.complex128), (P,))
    memo = {}

    def go(x):
        hit = memo.get(x.id)
        if hit is not None:
            return hit
        k = x.kind
        if k == "const":
            out = np.full(P, x.data, np.complex128)
        elif k == "xi":
            out = np.prod(xi_pts ** np.array(x.data), axis=1).astype(np.complex128)
        elif k == "lam":
            if lam_pts is None:
                raise InputError("expression depends on lambda but none was supplied")
            out = lam_pts.astype(np.complex128)
        elif k == "sum":
            out = sum(go(c) for c in x.children)
        elif k == "prod":
            out = go(x.children[0])
            for c in x.children[1:]:
                out = out * go(c)
        elif k == "inv":
            out = 1.0 / go(x.children[0])
        elif k == "pow":
            out = go(x.children[0]) ** x.data
        elif k == "log":
            out = np.log(go(x.children[0]))
        elif k == "cint":
            kind, z, contour, deg, q, leading = x.data
            lam_nodes, dlam, loglam = contour.quadrature(False)
            w = np.exp(z * loglam) if kind == "pow" else loglam
            r = np.linalg.norm(xi_pts, axis=1)
            xh = xi_pts / r[:, None]
            M = len(lam_nodes)
            out = np.empty(P, np.complex128)
            step = max(1, _CINT_BLOCK // M)
            # blocks keep the (points x contour nodes) table small
            for s0 in range(0, P, step):
                blk = xh[s0:s0 + step]
                inner = evaluate_scalar(x.children[0], np.repeat(blk, M, axis=0),
                                        np.tile(lam_nodes, len(blk))).reshape(len(blk), M)
                out[s0:s0 + step] = -(inner @ (w * dlam)) / (2j * np.pi)
            out *= r ** deg
        else:
            raise InputError(f"node {k} is not scalar")
        memo[x.id] = out
        return out

    if not e.commutes:
        raise InputError("evaluate_scalar needs an identity-valued expression")
    return go(e)


# ---------------------------------------------------------------------------
# components and classical symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomogeneousComponent:
    degree: complex
    expr: SymbolExpr
    lam_weight: int | None = None

    def check_degree(self):
        d = degree(self.expr)
        return is_zero(self.expr) or d is None or abs(complex(d) - complex(self.degree)) < 1e-12


def _descending(order, j):
    d = order - j
    if isinstance(d, complex) and d.imag == 0:
        d = d.real
    if isinstance(d, float) and d.is_integer():
        d = int(d)
    return d


class ClassicalSymbol:
    """Finite descending list of homogeneous components plus remainder order.

    ``exact`` marks symbols whose components sum to the full symbol (all
    further components are zero).  ``full`` optionally holds an exact
    expression for the whole symbol, valid down to xi = 0, used by the
    cut-off integral and the lattice trace.
    """

    def __init__(self, theta, order, components: Sequence[SymbolExpr], exact: bool = False,
                 full: SymbolExpr | None = None, lam_weight: int | None = None,
                 meta: dict | None = None):
        self.theta = _as_theta(theta)
        self.n = self.theta.n
        if isinstance(order, complex) and order.imag == 0:
            order = order.real
        if isinstance(order, float) and order.is_integer():
            order = int(order)
        self.order = order
        self.components = tuple(_lift(c) for c in components)
        self.exact = bool(exact)
        self.full = full
        self.lam_weight = lam_weight
        self.meta = dict(meta or {})

    @property
    def remainder_order(self):
        if self.exact:
            return -math.inf
        return _descending(self.order, len(self.components))

    def degree_of(self, j: int):
        return _descending(self.order, j)

    def component(self, j: int) -> SymbolExpr:
        if j < 0:
            raise InputError("negative component index")
        if j < len(self.components):
            return self.components[j]
        if self.exact:
            return ZERO
        raise MissingComponentError(
            f"component of degree {self.degree_of(j)} (depth {j + 1}) not available; "
            f"symbol carries {len(self.components)} components")

    def homogeneous(self, j: int) -> HomogeneousComponent:
        return HomogeneousComponent(self.degree_of(j), self.component(j), self.lam_weight)

    def component_at_degree(self, d) -> SymbolExpr | None:
        """Component of degree d, or None when d is not on the ladder."""
        j = complex(self.order) - complex(d)
        if abs(j.imag) > 1e-12 or abs(j.real - round(j.real)) > 1e-12 or round(j.real) < 0:
            return None
        return self.component(int(round(j.real)))

    def depth(self) -> int:
        return len(self.components)

    def is_differential(self) -> bool:
        if not self.exact or not isinstance(self.order, int) or self.order < 0:
            return False
        return all(is_zero(c) or _is_polynomial(c) for c in self.components)

    def __add__(self, other: "ClassicalSymbol") -> "ClassicalSymbol":
        return symbol_add(self, other)

    def __sub__(self, other):
        return symbol_add(self, scale_symbol(other, -1))

    def __repr__(self):
        tag = "exact" if self.exact else f"remainder {self.remainder_order}"
        return f"ClassicalSymbol(order={self.order}, {len(self.components)} components, {tag})"


def _is_polynomial(e: SymbolExpr) -> bool:
    for x in nodes(e):
        if x.kind in ("inv", "pow", "log", "cint", "lam"):
            return False
    return True


def identity_symbol(theta) -> ClassicalSymbol:
    return ClassicalSymbol(theta, 0, [ONE], exact=True, full=ONE)


def from_differential(theta, spec) -> ClassicalSymbol:
    """Symbol sum_alpha c_alpha xi^alpha from (alpha, coefficient) pairs.

    Coefficients may be MultiplierCoefficient, NCElement (left
    multiplication) or numbers.
    """
    theta = _as_theta(theta)
    by_deg: dict[int, list] = {}
    for alpha, c in spec:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != theta.n:
            raise InputError(f"multi-index {alpha} has wrong dimension")
        term = mul(xi(alpha), _lift(c))
        if isinstance(c, (MultiplierCoefficient, NCElement)) and c.theta != theta:
            raise InputError("coefficient theta differs from symbol theta")
        by_deg.setdefault(sum(alpha), []).append(term)
    if not by_deg:
        return ClassicalSymbol(theta, 0, [ZERO], exact=True, full=ZERO)
    top = max(by_deg)
    comps = [add(*by_deg.get(d, [])) for d in range(top, -1, -1)]
    while len(comps) > 1 and is_zero(comps[0]):
        comps.pop(0)
        top -= 1
    return ClassicalSymbol(theta, top, comps, exact=True, full=add(*comps))


def scale_symbol(A: ClassicalSymbol, c) -> ClassicalSymbol:
    comps = [mul(const(c), x) for x in A.components]
    full = None if A.full is None else mul(const(c), A.full)
    return ClassicalSymbol(A.theta, A.order, comps, A.exact, full, A.lam_weight)


def symbol_add(A: ClassicalSymbol, B: ClassicalSymbol) -> ClassicalSymbol:
    if A.theta != B.theta:
        raise InputError("theta mismatch")
    da = complex(A.order) - complex(B.order)
    if abs(da.imag) > 1e-12 or abs(da.real - round(da.real)) > 1e-12:
        raise InputError("orders differ by a non-integer; the sum is not classical")
    shift = int(round(da.real))
    if shift < 0:
        A, B, shift = B, A, -shift
    depth = []
    na = A.depth() if not A.exact else None
    nb = B.depth() + shift if not B.exact else None
    if na is None and nb is None:
        N = max(A.depth(), B.depth() + shift)
    else:
        N = min(x for x in (na, nb) if x is not None)
    for j in range(N):
        b = B.component(j - shift) if j >= shift else ZERO
        depth.append(add(A.component(j), b))
    full = None
    if A.full is not None and B.full is not None:
        full = add(A.full, B.full)
    return ClassicalSymbol(A.theta, A.order, depth, A.exact and B.exact, full,
                           A.lam_weight or B.lam_weight)


def _multi_indices(n: int, total: int):
    for combo in itertools.combinations_with_replacement(range(n), total):
        g = [0] * n
        for c in combo:
            g[c] += 1
        yield tuple(g)


def compose(A: ClassicalSymbol, B: ClassicalSymbol, N: int | None = None) -> ClassicalSymbol:
    """First N homogeneous components of sigma(A o B)."""
    if A.theta != B.theta:
        raise InputError("symbols have different theta")
    exact = A.exact and B.exact and A.is_differential() and B.is_differential()
    if N is None:
        if exact:
            N = A.order + B.order + 1
        else:
            N = min(S.depth() for S in (A, B) if not S.exact)
    n = A.n
    comps = []
    for j in range(N):
        terms = []
        for g in range(j + 1):
            for k in range(j - g + 1):
                l = j - g - k
                a = A.component(k)
                b = B.component(l)
                if is_zero(a) or is_zero(b):
                    continue
                for gamma in _multi_indices(n, g):
                    da = diff_xi_multi(a, gamma)
                    if is_zero(da):
                        continue
                    db = diff_x_multi(b, gamma)
                    if is_zero(db):
                        continue
                    fact = 1.0 / math.prod(math.factorial(x) for x in gamma)
                    terms.append(mul(const(fact), da, db))
        comps.append(add(*terms))
    full = None
    if exact:
        full = add(*comps)
    lw = A.lam_weight or B.lam_weight
    return ClassicalSymbol(A.theta, _descending(A.order + B.order, 0), comps, exact=exact,
                           full=full, lam_weight=lw)


def evaluate(c, xi_v, lam_v=None, ctx: EvalContext | None = None, theta=None
             ) -> MultiplierCoefficient:
    """Evaluate a HomogeneousComponent (or bare expression) at (xi, lambda)."""
    e = c.expr if isinstance(c, HomogeneousComponent) else c
    if ctx is None:
        if theta is None:
            theta = _infer_theta(e)
        ctx = EvalContext(theta)
    xi_v = np.asarray(xi_v, dtype=float)
    if not np.any(xi_v):
        raise InputError("symbols are evaluated at xi != 0")
    return evaluate_expr(e, ctx.theta, xi_v, lam_v, ctx)


def _infer_theta(e: SymbolExpr):
    for x in nodes(e):
        if x.kind == "coef":
            return x.data.theta
    for x in nodes(e):
        if x.kind == "xi":
            return ThetaMatrix.zero(len(x.data))
        if x.kind == "cint":
            return ThetaMatrix.zero(x.data[2].n)
    raise InputError("cannot infer theta; pass theta or ctx")


# ---------------------------------------------------------------------------
# symbol description files
# ---------------------------------------------------------------------------

def parse_symbol_file(path) -> ClassicalSymbol:
    """Read a differential symbol description.

    Format (blank lines and lines starting with '#' other than headers are skipped)::

        # symbol n=2
        # theta 0 0.7071 -0.7071 0
        term 2 0 identity 1.0 0.0
        term 1 0 left coeff.txt 1.0 0.0
        term 0 0 right coeff.txt 0.5 0.0
        term 0 0 pair a.txt b.txt 1.0 0.0

    Multi-index first, then the coefficient kind, element files (relative
    to the symbol file) and a complex scale factor.
    """
    from .nc_algebra import load
    base = os.path.dirname(os.path.abspath(path))
    n = None
    theta = None
    spec = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("symbol"):
                for tok in body.split()[1:]:
                    name, _, val = tok.partition("=")
                    if name == "n":
                        n = int(val)
            elif body.startswith("theta"):
                nums = [float(x) for x in body.split()[1:]]
                m = int(round(math.sqrt(len(nums))))
                if m * m != len(nums):
                    raise InputError("theta header is not square")
                theta = ThetaMatrix(np.array(nums).reshape(m, m), strict=True)
            continue
        parts = line.split()
        if parts[0] != "term" or n is None:
            raise InputError(f"unrecognised line in {path}: {line!r}")
        alpha = tuple(int(x) for x in parts[1:1 + n])
        kind = parts[1 + n]
        rest = parts[2 + n:]
        if theta is None:
            theta = ThetaMatrix.zero(n)

        def el(name):
            p = name if os.path.isabs(name) else os.path.join(base, name)
            if not os.path.exists(p):
                raise InputError(f"coefficient file not found: {p}")
            e = load(p)
            if e.theta != theta:
                raise InputError(f"theta in {p} differs from the symbol header")
            return e

        if kind == "identity":
            c = MultiplierCoefficient.identity(theta)
        elif kind == "left":
            c = MultiplierCoefficient.left(el(rest.pop(0)))
        elif kind == "right":
            c = MultiplierCoefficient.right(el(rest.pop(0)))
        elif kind == "pair":
            a = el(rest.pop(0))
            b = el(rest.pop(0))
            c = MultiplierCoefficient.from_pairs(theta, [(a, b)])
        else:
            raise InputError(f"unknown coefficient kind {kind!r}")
        scale = complex(float(rest[0]), float(rest[1])) if len(rest) >= 2 else 1.0
        spec.append((alpha, c.scale(scale)))
    if n is None:
        raise InputError("missing '# symbol n=..' header")
    return from_differential(theta, spec)
