"""Truncated smooth noncommutative torus A_theta.

Elements are finite coefficient tables a = sum_k a_k U_k on Z^n.  The
product convention is U_k U_l = exp(-i pi <k, theta l>) U_{k+l}, which gives
the commutation phase U_k U_l = exp(-2 pi i <k, theta l>) U_l U_k and makes
U_k^* = U_{-k} exact.  theta = 0 is the commutative torus.

Multiplier coefficients (finite sums of L_a R_b) are stored as coefficient
tables on Z^n x Z^n: the pair (k, l) stands for L_{U_k} R_{U_l}.  Under
composition these tables multiply like an NC torus of dimension 2n with
parameter diag(theta, -theta), so the same kernel serves both.
"""
from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import ConvergenceError, InputError, SingularElementError, TruncationError

_BIG = 1 << 30


# ---------------------------------------------------------------------------
# theta
# ---------------------------------------------------------------------------

class ThetaMatrix:
    """Antisymmetric real n x n deformation matrix (n = 1..4).

    A non-antisymmetric input has its symmetric part discarded, since only
    the antisymmetric part enters the commutation phase; ``strict=True``
    rejects such input instead.
    """

    __slots__ = ("entries", "n", "_zero")

    def __init__(self, entries, strict: bool = False):
        arr = np.array(entries, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InputError(f"theta must be square, got shape {arr.shape}")
        n = arr.shape[0]
        if not 1 <= n <= 4:
            raise InputError(f"dimension must be 1..4, got {n}")
        asym = 0.5 * (arr - arr.T)
        if strict and not np.allclose(arr, asym, atol=1e-14, rtol=0):
            raise InputError("theta is not antisymmetric")
        asym.setflags(write=False)
        self.entries = asym
        self.n = n
        self._zero = not np.any(asym)

    @classmethod
    def zero(cls, n: int) -> "ThetaMatrix":
        return cls(np.zeros((n, n)))

    @classmethod
    def two(cls, theta12: float) -> "ThetaMatrix":
        """The n = 2 matrix [[0, theta12], [-theta12, 0]]."""
        return cls([[0.0, theta12], [-theta12, 0.0]])

    @property
    def is_zero(self) -> bool:
        return self._zero

    def resonant(self, k) -> bool:
        """True when theta k lies in Z^n, i.e. U_k is central for the averaged trace."""
        v = self.entries @ np.asarray(k, dtype=float)
        return bool(np.all(np.abs(v - np.round(v)) < 1e-12))

    def doubled(self) -> np.ndarray:
        """Parameter of the multiplier algebra: diag(theta, -theta)."""
        n = self.n
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = self.entries
        out[n:, n:] = -self.entries
        return out

    def __eq__(self, other):
        return isinstance(other, ThetaMatrix) and self.n == other.n and np.array_equal(
            self.entries, other.entries)

    def __hash__(self):
        return hash((self.n, self.entries.tobytes()))

    def __repr__(self):
        return f"ThetaMatrix({self.entries.tolist()!r})"


def _as_theta(theta) -> ThetaMatrix:
    return theta if isinstance(theta, ThetaMatrix) else ThetaMatrix(theta)


# ---------------------------------------------------------------------------
# sparse table helpers
# ---------------------------------------------------------------------------

def _canonical(keys: np.ndarray, vals: np.ndarray):
    """Sort keys lexicographically and merge duplicates; vals has shape (B, N)."""
    d = keys.shape[1]
    if keys.shape[0] == 0:
        return np.zeros((0, d), np.int64), np.zeros((vals.shape[0], 0), np.complex128)
    uk, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    if len(uk) == len(keys) and np.all(np.diff(inv) > 0):
        out = vals
    else:
        S = sp.csr_matrix((np.ones(len(inv)), (np.arange(len(inv)), inv)),
                          shape=(len(inv), len(uk)))
        out = np.asarray((S.T @ vals.T).T)
    keep = np.any(out != 0, axis=0)
    return uk[keep].astype(np.int64), np.ascontiguousarray(out[:, keep], dtype=np.complex128)


def _truncate(keys, vals, support, nblocks=1):
    """Drop keys with |k|_inf > support; returns kept arrays and l1 mass dropped."""
    if support is None or keys.shape[0] == 0:
        return keys, vals, 0.0
    inside = np.all(np.abs(keys) <= support, axis=1)
    if inside.all():
        return keys, vals, 0.0
    dropped = float(np.abs(vals[:, ~inside]).sum(axis=1).max())
    return keys[inside], vals[:, inside], dropped


def _box_points(radius: int, n: int, active=None) -> np.ndarray:
    """Lattice points of the box |m|_inf <= radius in row-major order.

    Dimensions not listed in ``active`` are pinned to zero.
    """
    axes = []
    for p in range(n):
        if active is None or active[p]:
            axes.append(np.arange(-radius, radius + 1))
        else:
            axes.append(np.zeros(1, dtype=np.int64))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# elements
# ---------------------------------------------------------------------------

class NCElement:
    """Immutable truncated element sum_k a_k U_k of A_theta.

    ``support`` is the declared box radius (coefficients vanish outside
    |k|_inf <= support).  ``dropped`` records the l1 mass discarded by the
    truncation that produced this element.
    """

    __slots__ = ("theta", "keys", "vals", "support", "dropped")

    def __init__(self, theta, keys, vals, support: int | None = None,
                 dropped: float = 0.0, _canonical_form: bool = False):
        theta = _as_theta(theta)
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, theta.n)
        vals = np.asarray(vals, dtype=np.complex128).reshape(1, -1)
        if keys.shape[0] != vals.shape[1]:
            raise InputError("keys and values differ in length")
        if not _canonical_form:
            keys, vals = _canonical(keys, vals)
        natural = int(np.abs(keys).max()) if keys.shape[0] else 0
        if support is None:
            support = natural
        elif natural > support:
            raise InputError(f"coefficient at radius {natural} outside declared support {support}")
        keys.setflags(write=False)
        v = vals[0].copy()
        v.setflags(write=False)
        self.theta = theta
        self.keys = keys
        self.vals = v
        self.support = int(support)
        self.dropped = float(dropped)

    # construction -----------------------------------------------------------
    @classmethod
    def from_dict(cls, theta, coeffs: Mapping) -> "NCElement":
        theta = _as_theta(theta)
        if not coeffs:
            return cls.zero(theta)
        keys = np.array([tuple(np.atleast_1d(k)) for k in coeffs], dtype=np.int64)
        vals = np.array(list(coeffs.values()), dtype=complex)
        return cls(theta, keys.reshape(-1, theta.n), vals)

    @classmethod
    def zero(cls, theta) -> "NCElement":
        theta = _as_theta(theta)
        return cls(theta, np.zeros((0, theta.n), np.int64), np.zeros(0), _canonical_form=True)

    @classmethod
    def scalar(cls, theta, c: complex = 1.0) -> "NCElement":
        theta = _as_theta(theta)
        if c == 0:
            return cls.zero(theta)
        return cls(theta, np.zeros((1, theta.n), np.int64), [c], _canonical_form=True)

    @classmethod
    def unit(cls, theta) -> "NCElement":
        return cls.scalar(theta, 1.0)

    @classmethod
    def monomial(cls, theta, k, c: complex = 1.0) -> "NCElement":
        theta = _as_theta(theta)
        k = np.asarray(k, dtype=np.int64).reshape(1, theta.n)
        return cls(theta, k, [c])

    # inspection -------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.theta.n

    def coeff(self, k) -> complex:
        k = np.asarray(k, dtype=np.int64).reshape(-1)
        hit = np.nonzero(np.all(self.keys == k, axis=1))[0]
        return complex(self.vals[hit[0]]) if len(hit) else 0j

    def to_dict(self) -> dict:
        return {tuple(int(x) for x in k): complex(v) for k, v in zip(self.keys, self.vals)}

    def norm1(self) -> float:
        return float(np.abs(self.vals).sum())

    def norm2(self) -> float:
        return float(np.sqrt((np.abs(self.vals) ** 2).sum()))

    def is_selfadjoint(self, tol: float = 1e-13) -> bool:
        return (self - star(self)).norm1() <= tol * max(1.0, self.norm1())

    def truncate(self, support: int) -> "NCElement":
        k, v, dropped = _truncate(self.keys, self.vals[None, :], support)
        return NCElement(self.theta, k, v[0], support=min(self.support, support),
                         dropped=self.dropped + dropped, _canonical_form=True)

    # arithmetic -------------------------------------------------------------
    def _check(self, other: "NCElement"):
        if not isinstance(other, NCElement):
            raise InputError("expected an NCElement")
        if self.theta != other.theta:
            raise InputError("theta mismatch between operands")

    def __add__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            other = NCElement.scalar(self.theta, other)
        self._check(other)
        keys = np.concatenate([self.keys, other.keys])
        vals = np.concatenate([self.vals, other.vals])[None, :]
        k, v = _canonical(keys, vals)
        return NCElement(self.theta, k, v[0], support=max(self.support, other.support),
                         dropped=self.dropped + other.dropped, _canonical_form=True)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            other = NCElement.scalar(self.theta, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c: complex) -> "NCElement":
        if c == 0:
            return NCElement(self.theta, np.zeros((0, self.n), np.int64), [], support=self.support,
                             _canonical_form=True)
        return NCElement(self.theta, self.keys, self.vals * c, support=self.support,
                         dropped=self.dropped * abs(c), _canonical_form=True)

    def __mul__(self, other):
        if isinstance(other, NCElement):
            return mul(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __truediv__(self, c):
        return self.scale(1.0 / c)

    def __eq__(self, other):
        return (isinstance(other, NCElement) and self.theta == other.theta
                and np.array_equal(self.keys, other.keys) and np.array_equal(self.vals, other.vals))

    def __hash__(self):
        return hash((self.theta, self.keys.tobytes(), self.vals.tobytes()))

    def __repr__(self):
        terms = ", ".join(f"{tuple(int(x) for x in k)}: {complex(v):.6g}"
                          for k, v in list(zip(self.keys, self.vals))[:6])
        more = "" if len(self.vals) <= 6 else f", ... ({len(self.vals)} terms)"
        return f"NCElement({{{terms}{more}}})"


def mul(a: NCElement, b: NCElement, target_support: int | None = None) -> NCElement:
    """Twisted product; the support box grows additively unless truncated."""
    a._check(b)
    support = a.support + b.support
    trunc = support if target_support is None else min(support, target_support)
    lo = np.full(a.n, -trunc, np.int64)
    hi = np.full(a.n, trunc, np.int64)
    keys, vals = _kernels.twisted_product(a.keys, a.vals[None, :], b.keys, b.vals[None, :],
                                          a.theta.entries, lo, hi)
    dropped = 0.0
    if target_support is not None and target_support < support:
        # mass that left the box: compare l1 of the untruncated product bound
        full_k, full_v = _kernels.twisted_product(
            a.keys, a.vals[None, :], b.keys, b.vals[None, :], a.theta.entries,
            np.full(a.n, -support, np.int64), np.full(a.n, support, np.int64))
        outside = ~np.all(np.abs(full_k) <= trunc, axis=1)
        dropped = float(np.abs(full_v[0, outside]).sum())
    return NCElement(a.theta, keys, vals[0], support=trunc,
                     dropped=a.dropped + b.dropped + dropped, _canonical_form=True)


def trace_tau(a: NCElement) -> complex:
    """tau(sum a_k U_k) = a_0."""
    return a.coeff(np.zeros(a.n, np.int64))


def derive(a: NCElement, j: int) -> NCElement:
    """delta_j: multiply the coefficient of U_k by k_j (directions are 1-based)."""
    if not 1 <= j <= a.n:
        raise InputError(f"direction must be in 1..{a.n}, got {j}")
    return NCElement(a.theta, a.keys, a.vals * a.keys[:, j - 1], support=a.support,
                     dropped=a.dropped, _canonical_form=False)


def star(a: NCElement) -> NCElement:
    """Adjoint: (a*)_k = conj(a_{-k})."""
    return NCElement(a.theta, -a.keys, np.conj(a.vals), support=a.support, dropped=a.dropped)


# ---------------------------------------------------------------------------
# truncated linear algebra
# ---------------------------------------------------------------------------

def _active_dims(keys: np.ndarray, n: int) -> np.ndarray:
    if keys.shape[0] == 0:
        return np.zeros(n, bool)
    return np.any(keys != 0, axis=0)


def left_matrix(a: NCElement, col_radius: int, row_radius: int | None = None,
                active=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense matrix of L_a from the box col_radius to the box row_radius.

    Returns (matrix, column lattice points, row lattice points).  Only the
    dimensions flagged in ``active`` are spanned (others pinned to 0), which
    is exact whenever a's support lies in the active coordinate subspace.
    """
    n = a.n
    if row_radius is None:
        row_radius = col_radius
    if active is None:
        active = _active_dims(a.keys, n)
    cols = _box_points(col_radius, n, active)
    rows = _box_points(row_radius, n, active)
    keys2 = np.concatenate([a.keys, np.zeros_like(a.keys)], axis=1)
    r, c, data = _kernels.multiplier_entries(keys2, a.vals[None, :], cols, a.theta.entries,
                                             row_radius)
    side = 2 * row_radius + 1
    # map full-box row codes back to positions in the (possibly pinned) row list
    codes = np.zeros(len(rows), np.int64)
    for p in range(n):
        codes = codes * side + (rows[:, p] + row_radius)
    pos = np.searchsorted(codes, r)
    M = np.zeros((len(rows), len(cols)), np.complex128)
    np.add.at(M, (pos, c), data)
    return M, cols, rows


def _unit_index(points: np.ndarray) -> int:
    return int(np.nonzero(np.all(points == 0, axis=1))[0][0])


def invert(a: NCElement, target_support: int | None = None, tol: float = 1e-10,
           radius: int | None = None, max_radius: int = 256) -> NCElement:
    """Inverse by least squares on the left-multiplication matrix of the truncated space.

    The unknown lives on the box of ``radius`` (default twice the operand
    support, at least 2 and at least ``target_support``); rows are not
    truncated, so the residual a x - 1 is exact.  The radius is doubled until
    that residual is below ``tol``.  A smallest singular value below ``tol``
    raises SingularElementError; running past ``max_radius`` raises
    TruncationError.
    """
    if radius is None:
        radius = max(2 * a.support, 2, target_support or 0)
    if target_support is None:
        target_support = radius
    while True:
        M, cols, rows = left_matrix(a, radius, radius + a.support)
        rhs = np.zeros(len(rows), np.complex128)
        rhs[_unit_index(rows)] = 1.0
        x, _, _, svals = np.linalg.lstsq(M, rhs, rcond=None)
        smin = float(svals[-1]) if len(svals) else 0.0
        if smin <= tol:
            raise SingularElementError("element is numerically singular on the truncated space",
                                       smin)
        resid = float(np.linalg.norm(M @ x - rhs))
        if resid <= tol:
            break
        if 2 * radius > max_radius:
            raise TruncationError(
                f"inverse residual {resid:.3e} above tol at radius {radius}; raise max_radius")
        radius *= 2
    out = NCElement(a.theta, cols, x, support=radius, dropped=resid)
    return out.truncate(target_support)


def exp_element(a: NCElement, target_support: int | None = None, tol: float = 1e-12,
                max_terms: int = 80, max_support: int = 256) -> NCElement:
    """e^a by scaling and squaring of the truncated power series.

    Without ``target_support`` the box starts at max(16, 8 support) and is
    doubled (up to ``max_support``) until the dropped mass is below tol.
    """
    auto = target_support is None
    work = max(16, 8 * a.support) if auto else target_support
    while True:
        total = _exp_series(a, work, tol, max_terms)
        if total.dropped <= tol * max(1.0, total.norm1()):
            return total
        if not auto or 2 * work > max_support:
            raise TruncationError(
                f"exponential dropped mass {total.dropped:.3e} above tol; raise target_support")
        work *= 2


def _exp_series(a, work, tol, max_terms):
    norm = a.norm1()
    s = 0 if norm <= 0.5 else int(math.ceil(math.log2(norm / 0.5)))
    b = a.scale(2.0 ** -s)
    term = NCElement.unit(a.theta)
    total = term
    for k in range(1, max_terms + 1):
        term = mul(term, b, target_support=work).scale(1.0 / k)
        total = total + term
        if term.norm1() < 1e-3 * tol * max(1.0, total.norm1()):
            break
    else:
        raise ConvergenceError("exponential series did not converge", term.norm1())
    for _ in range(s):
        total = mul(total, total, target_support=work)
    return total


# ---------------------------------------------------------------------------
# spectral calculus of a single element
# ---------------------------------------------------------------------------

def _line_direction(keys: np.ndarray):
    """Primitive vector e when every key is an integer multiple of e, else None."""
    nz = keys[np.any(keys != 0, axis=1)]
    if len(nz) == 0:
        return None
    g = 0
    for x in nz[0]:
        g = math.gcd(g, int(x))
    e = nz[0] // g
    if e[np.nonzero(e)[0][0]] < 0:
        e = -e
    p = int(np.nonzero(e)[0][0])
    t = nz[:, p] // e[p]
    if np.array_equal(t[:, None] * e[None, :], nz):
        return e.astype(np.int64)
    return None


def support_points(keys: np.ndarray, n: int, radius: int) -> np.ndarray:
    """Basis points for compressing multiplication by an element with these keys.

    Line-supported elements (all keys on Z e) get the segment {j e : |j| <= radius};
    otherwise the box of ``radius`` over the active coordinates.
    """
    e = _line_direction(keys)
    if e is not None:
        return (np.arange(-radius, radius + 1)[:, None] * e[None, :]).astype(np.int64)
    return _box_points(radius, n, _active_dims(keys, n))


def compressed_left_matrix(a: NCElement, points: np.ndarray) -> np.ndarray:
    """P L_a P on span{U_m : m in points}."""
    index = {tuple(m): i for i, m in enumerate(points.tolist())}
    th = a.theta.entries
    M = np.zeros((len(points), len(points)), np.complex128)
    ph = np.exp(-1j * np.pi * (a.keys.astype(float) @ th @ points.T.astype(float)))
    for t, k in enumerate(a.keys.tolist()):
        for c, m in enumerate(points.tolist()):
            r = index.get(tuple(ki + mi for ki, mi in zip(k, m)))
            if r is not None:
                M[r, c] += a.vals[t] * ph[t, c]
    return M


class ElementSpectrum:
    """Eigen-decomposition of the compressed left multiplication by x.

    f(x) is approximated by f(P L_x P) applied to U_0, where P projects onto
    the basis points of ``support_points``.  Used for batched resolvents
    (x + s)^{-1} along a contour.
    """

    def __init__(self, x: NCElement, radius: int):
        self.x = x
        self.radius = int(radius)
        pts = support_points(x.keys, x.n, self.radius)
        M = compressed_left_matrix(x, pts)
        self.points = pts
        e0 = np.zeros(len(pts), np.complex128)
        e0[_unit_index(pts)] = 1.0
        self.hermitian = bool(np.allclose(M, M.conj().T, atol=1e-13 * max(1.0, np.abs(M).max())))
        if self.hermitian:
            w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
            self.eigvals = w.astype(np.complex128)
            self.V = V
            self.c0 = V.conj().T @ e0
        else:
            w, V = np.linalg.eig(M)
            self.eigvals = w
            self.V = V
            self.c0 = np.linalg.solve(V, e0)

    def apply(self, f_vals: np.ndarray) -> np.ndarray:
        """Coefficients of f(x) for f sampled at the eigenvalues; f_vals is (B, D) or (D,)."""
        f_vals = np.atleast_2d(f_vals)
        return (f_vals * self.c0[None, :]) @ self.V.T

    def resolvent(self, shifts: np.ndarray) -> np.ndarray:
        """Coefficients of (x + s)^{-1} for each shift s; returns (B, D)."""
        shifts = np.asarray(shifts, dtype=np.complex128).reshape(-1)
        den = self.eigvals[None, :] + shifts[:, None]
        amin = np.abs(den).min()
        if amin < 1e-14 * max(1.0, np.abs(self.eigvals).max()):
            raise SingularElementError("resolvent evaluated on the spectrum", float(amin))
        return self.apply(1.0 / den)


# ---------------------------------------------------------------------------
# multiplier coefficients
# ---------------------------------------------------------------------------

class MultiplierCoefficient:
    """Finite sum of left/right multiplier pairs, sum_i L_{a_i} R_{b_i}.

    Stored as a table on Z^n x Z^n: entry c_{k,l} multiplies L_{U_k} R_{U_l}.
    At theta = 0 every right factor is folded into the left one, so
    ``normal_form`` is idempotent.  Values may carry a leading batch axis
    (used during symbol evaluation); public results are unbatched.
    """

    __slots__ = ("theta", "keys", "_v", "batched", "dropped")

    def __init__(self, theta, keys, vals, batched: bool = False, dropped: float = 0.0,
                 _canonical_form: bool = False):
        theta = _as_theta(theta)
        n = theta.n
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 2 * n)
        v = np.asarray(vals, dtype=np.complex128)
        v = v.reshape(-1, keys.shape[0]) if batched else v.reshape(1, keys.shape[0])
        if theta.is_zero and keys.shape[0] and np.any(keys[:, n:]):
            keys = np.concatenate([keys[:, :n] + keys[:, n:], np.zeros((keys.shape[0], n),
                                                                       np.int64)], axis=1)
            _canonical_form = False
        if not _canonical_form:
            keys, v = _canonical(keys, v)
        self.theta = theta
        self.keys = keys
        self._v = v
        self.batched = bool(batched)
        self.dropped = float(dropped)

    # construction -----------------------------------------------------------
    @classmethod
    def from_pairs(cls, theta, pairs: Iterable) -> "MultiplierCoefficient":
        theta = _as_theta(theta)
        out = cls.zero(theta)
        for left, right in pairs:
            out = out + cls._pair(left, right)
        return out

    @classmethod
    def _pair(cls, left: NCElement, right: NCElement) -> "MultiplierCoefficient":
        left._check(right)
        n = left.n
        ka = np.repeat(left.keys, len(right.keys), axis=0)
        kb = np.tile(right.keys, (len(left.keys), 1))
        vals = np.outer(left.vals, right.vals).ravel()
        return cls(left.theta, np.concatenate([ka, kb], axis=1).reshape(-1, 2 * n), vals)

    @classmethod
    def left(cls, a: NCElement) -> "MultiplierCoefficient":
        return cls(a.theta, np.concatenate([a.keys, np.zeros_like(a.keys)], axis=1), a.vals,
                   _canonical_form=True)

    @classmethod
    def right(cls, b: NCElement) -> "MultiplierCoefficient":
        return cls(b.theta, np.concatenate([np.zeros_like(b.keys), b.keys], axis=1), b.vals)

    @classmethod
    def identity(cls, theta, c: complex = 1.0) -> "MultiplierCoefficient":
        theta = _as_theta(theta)
        if c == 0:
            return cls.zero(theta)
        return cls(theta, np.zeros((1, 2 * theta.n), np.int64), [c], _canonical_form=True)

    @classmethod
    def zero(cls, theta) -> "MultiplierCoefficient":
        theta = _as_theta(theta)
        return cls(theta, np.zeros((0, 2 * theta.n), np.int64), [], _canonical_form=True)

    # inspection -------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.theta.n

    @property
    def vals(self) -> np.ndarray:
        return self._v if self.batched else self._v[0]

    @property
    def batch(self) -> int:
        return self._v.shape[0]

    def is_zero(self) -> bool:
        return self.keys.shape[0] == 0

    def is_pure_left(self) -> bool:
        return not np.any(self.keys[:, self.n:])

    def is_pure_right(self) -> bool:
        return not np.any(self.keys[:, :self.n])

    def left_element(self, b: int = 0) -> NCElement:
        if not self.is_pure_left():
            raise InputError("multiplier has right factors")
        return NCElement(self.theta, self.keys[:, :self.n], self._v[b], _canonical_form=True)

    def right_element(self, b: int = 0) -> NCElement:
        if not self.is_pure_right():
            raise InputError("multiplier has left factors")
        return NCElement(self.theta, self.keys[:, self.n:], self._v[b], _canonical_form=True)

    @property
    def terms(self) -> list:
        """(left, right) NCElement pairs, one per distinct right mode."""
        n = self.n
        out = []
        if self.batched:
            raise InputError("terms of a batched multiplier are not defined")
        rights = np.unique(self.keys[:, n:], axis=0)
        for l in rights:
            sel = np.all(self.keys[:, n:] == l, axis=1)
            left = NCElement(self.theta, self.keys[sel, :n], self._v[0, sel])
            out.append((left, NCElement.monomial(self.theta, l)))
        return out

    def normal_form(self) -> "MultiplierCoefficient":
        return MultiplierCoefficient(self.theta, self.keys, self._v, batched=self.batched,
                                     dropped=self.dropped)

    def unbatch(self, b: int) -> "MultiplierCoefficient":
        return MultiplierCoefficient(self.theta, self.keys, self._v[b], dropped=self.dropped,
                                     _canonical_form=True)

    def support(self) -> int:
        return int(np.abs(self.keys).max()) if self.keys.shape[0] else 0

    def identity_part(self) -> np.ndarray:
        """Batched coefficient of L_1 R_1."""
        hit = np.nonzero(~np.any(self.keys, axis=1))[0]
        if len(hit) == 0:
            return np.zeros(self.batch, np.complex128)
        return self._v[:, hit[0]].copy()

    # arithmetic -------------------------------------------------------------
    def _check(self, other):
        if not isinstance(other, MultiplierCoefficient):
            raise InputError("expected a MultiplierCoefficient")
        if self.theta != other.theta:
            raise InputError("theta mismatch between multipliers")

    def __add__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            other = MultiplierCoefficient.identity(self.theta, other)
        self._check(other)
        B = max(self.batch, other.batch)
        keys = np.concatenate([self.keys, other.keys])
        vals = np.concatenate([np.broadcast_to(self._v, (B, self._v.shape[1])),
                               np.broadcast_to(other._v, (B, other._v.shape[1]))], axis=1)
        return MultiplierCoefficient(self.theta, keys, vals, batched=self.batched or other.batched,
                                     dropped=self.dropped + other.dropped)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other if isinstance(other, MultiplierCoefficient) else -other)

    def scale(self, c) -> "MultiplierCoefficient":
        """Multiply by a scalar or by a batch vector of scalars."""
        c = np.asarray(c, dtype=np.complex128)
        if c.ndim == 0:
            if c == 0:
                return MultiplierCoefficient.zero(self.theta) if not self.batched else \
                    MultiplierCoefficient(self.theta, self.keys[:0], self._v[:, :0], batched=True,
                                          _canonical_form=True)
            return MultiplierCoefficient(self.theta, self.keys, self._v * c, batched=self.batched,
                                         dropped=self.dropped * abs(complex(c)), _canonical_form=True)
        v = self._v * c.reshape(-1, 1)
        return MultiplierCoefficient(self.theta, self.keys, v, batched=True, dropped=self.dropped,
                                     _canonical_form=True)

    def __mul__(self, other):
        if isinstance(other, MultiplierCoefficient):
            return self.compose(other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def compose(self, other: "MultiplierCoefficient", support: int | None = None
                ) -> "MultiplierCoefficient":
        """Operator product: (L_a R_b)(L_c R_d) = L_{ac} R_{db}."""
        self._check(other)
        d = 2 * self.n
        big = _BIG if support is None else support
        lo = np.full(d, -big, np.int64)
        hi = np.full(d, big, np.int64)
        keys, vals = _kernels.twisted_product(self.keys, self._v, other.keys, other._v,
                                              self.theta.doubled(), lo, hi)
        dropped = self.dropped + other.dropped
        return MultiplierCoefficient(self.theta, keys, vals,
                                     batched=self.batched or other.batched, dropped=dropped,
                                     _canonical_form=not self.theta.is_zero)

    def derive(self, j: int) -> "MultiplierCoefficient":
        """Commutator [delta_j, c]: L_{delta a} R_b + L_a R_{delta b}."""
        n = self.n
        if not 1 <= j <= n:
            raise InputError(f"direction must be in 1..{n}, got {j}")
        w = self.keys[:, j - 1] + self.keys[:, n + j - 1]
        keep = w != 0
        return MultiplierCoefficient(self.theta, self.keys[keep], self._v[:, keep] * w[keep],
                                     batched=self.batched, dropped=self.dropped,
                                     _canonical_form=True)

    def adjoint(self) -> "MultiplierCoefficient":
        """(L_{U_k} R_{U_l})^dagger = L_{U_-k} R_{U_-l} on the GNS space of tau."""
        return MultiplierCoefficient(self.theta, -self.keys, np.conj(self._v), batched=self.batched)

    def trace_rule(self):
        """Averaged diagonal matrix element lim mean_m <c U_m, U_m>.

        Equals sum over resonant k (theta k in Z^n) of c_{k,-k}: tau(a)tau(b)
        on L_a R_b for irrational theta, tau(ab) at theta = 0.
        """
        n = self.n
        sel = np.all(self.keys[:, :n] == -self.keys[:, n:], axis=1)
        idx = np.nonzero(sel)[0]
        if len(idx):
            th = self.theta.entries
            v = self.keys[idx, :n].astype(float) @ th.T
            res = np.all(np.abs(v - np.round(v)) < 1e-12, axis=1)
            idx = idx[res]
        out = self._v[:, idx].sum(axis=1) if len(idx) else np.zeros(self.batch, np.complex128)
        return out if self.batched else complex(out[0])

    def matrix(self, K: int) -> sp.csr_matrix:
        """Sparse matrix on the box |m|_inf <= K (row-major basis order)."""
        if self.batched:
            raise InputError("matrix of a batched multiplier is not defined")
        cols = _box_points(K, self.n)
        r, c, data = _kernels.multiplier_entries(self.keys, self._v, cols, self.theta.entries, K)
        D = len(cols)
        return sp.csr_matrix((data, (r, c)), shape=(D, D))

    def __eq__(self, other):
        return (isinstance(other, MultiplierCoefficient) and self.theta == other.theta
                and np.array_equal(self.keys, other.keys) and np.array_equal(self._v, other._v))

    def __hash__(self):
        return hash((self.theta, self.keys.tobytes(), self._v.tobytes()))

    def digest(self) -> bytes:
        import hashlib
        h = hashlib.sha1()
        h.update(self.keys.tobytes())
        h.update(self._v.tobytes())
        h.update(self.theta.entries.tobytes())
        return h.digest()

    def __repr__(self):
        return f"MultiplierCoefficient({len(self.keys)} terms{', batched' if self.batched else ''})"


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def dumps(a: NCElement) -> str:
    """Text form: header with n and theta, then 'k_1 ... k_n  re  im' per line."""
    lines = [f"# ncelement n={a.n} support={a.support}",
             "# theta " + " ".join(repr(float(x)) for x in a.theta.entries.ravel())]
    for k, v in zip(a.keys, a.vals):
        ks = " ".join(str(int(x)) for x in k)
        lines.append(f"{ks}  {float(v.real)!r}  {float(v.imag)!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> NCElement:
    n = None
    theta = None
    support = None
    keys = []
    vals = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("ncelement"):
                for tok in body.split()[1:]:
                    name, _, val = tok.partition("=")
                    if name == "n":
                        n = int(val)
                    elif name == "support":
                        support = int(val)
            elif body.startswith("theta"):
                nums = [float(x) for x in body.split()[1:]]
                m = int(round(math.sqrt(len(nums))))
                if m * m != len(nums):
                    raise InputError("theta header is not a square matrix")
                theta = np.array(nums).reshape(m, m)
            continue
        parts = line.split()
        if n is None:
            raise InputError("missing '# ncelement n=..' header")
        if len(parts) != n + 2:
            raise InputError(f"expected {n + 2} fields, got {len(parts)}: {line!r}")
        keys.append([int(x) for x in parts[:n]])
        vals.append(complex(float(parts[n]), float(parts[n + 1])))
    if n is None or theta is None:
        raise InputError("missing header")
    th = ThetaMatrix(theta, strict=True)
    if th.n != n:
        raise InputError("theta size does not match n")
    return NCElement(th, np.array(keys, dtype=np.int64).reshape(-1, n), np.array(vals),
                     support=support)


def save(a: NCElement, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(a))


def load(path) -> NCElement:
    with open(path) as fh:
        return loads(fh.read())
