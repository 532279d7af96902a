"""Truncated-matrix realisation on the GNS basis {U_m : |m|_inf <= K}.

Columns of an operator matrix are images of the basis vectors U_m, in the
row-major order of the box.  Differential operators are realised exactly
(Op(sigma) U_m = sigma(m) U_m); only the boundary band of width equal to
the coefficient support is contaminated by truncation.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import ConvergenceError, InputError
from .nc_algebra import MultiplierCoefficient, NCElement, ThetaMatrix, _box_points
from .symbol_calculus import (ClassicalSymbol, EvalContext, add, evaluate_expr, nodes,
                              normal_form)


# ---------------------------------------------------------------------------
# operator matrices
# ---------------------------------------------------------------------------

def differential_terms(S: ClassicalSymbol) -> list:
    """(alpha, MultiplierCoefficient) pairs with sigma = sum_alpha c_alpha xi^alpha."""
    if not S.is_differential():
        raise InputError("expected a differential symbol")
    e = S.full if S.full is not None else add(*S.components)
    by_id = {x.id: x for x in nodes(e)}
    n = S.n
    out: dict = {}
    for (g, comm, word), v in normal_form(e).items():
        if comm:
            raise InputError("differential symbol has non-polynomial scalar factors")
        c = MultiplierCoefficient.identity(S.theta, v)
        for a in word:
            node = by_id[a]
            if node.kind != "coef":
                raise InputError(f"unexpected node {node.kind} in a differential symbol")
            c = c.compose(node.data)
        alpha = tuple(g) if g else (0,) * n
        out[alpha] = out[alpha] + c if alpha in out else c
    return sorted(out.items())


def _coefficient_profile(coefs, n):
    """Support radius and w(d): relative coefficient mass at shift > d."""
    shifts = []
    mags = []
    for c in coefs:
        if c.keys.shape[0] == 0:
            continue
        shifts.append(np.abs(c.keys[:, :n] + c.keys[:, n:]).max(axis=1))
        mags.append(np.abs(c.vals))
    if not shifts:
        return 0, np.zeros(0)
    s = np.concatenate(shifts)
    m = np.concatenate(mags)
    tot = m.sum()
    band = int(s.max())
    w = np.array([m[s > d].sum() / tot for d in range(band)])
    return band, w


@dataclass
class OperatorMatrix:
    K: int
    n: int
    theta: ThetaMatrix
    matrix: sp.csr_matrix
    hermitian: bool
    band: int = 0
    profile: np.ndarray = field(default_factory=lambda: np.zeros(0))
    floor: float | None = None
    _eig: list | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def points(self) -> np.ndarray:
        return _box_points(self.K, self.n)

    @property
    def interior(self) -> np.ndarray:
        """Mask of basis vectors whose column is exact despite truncation."""
        return np.abs(self.points).max(axis=1) <= self.K - self.band

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermitian_residual(self) -> float:
        d = self.matrix - self.matrix.getH()
        return float(abs(d).max()) if d.nnz else 0.0

    def blocks(self) -> list:
        """Index sets of the connected components of the sparsity graph."""
        pattern = sp.csr_matrix((np.abs(self.matrix.data), self.matrix.indices,
                                 self.matrix.indptr), shape=self.matrix.shape)
        ncomp, lab = connected_components(pattern, directed=False)
        order = np.argsort(lab, kind="stable")
        cuts = np.flatnonzero(np.diff(lab[order])) + 1
        return np.split(order, cuts)

    def eigh(self) -> list:
        """Per-block (indices, eigenvalues, eigenvectors), cached."""
        if self._eig is not None:
            return self._eig
        if not self.hermitian:
            raise InputError("eigendecomposition requires a Hermitian matrix")
        out = []
        worst = 0.0
        scale = max(float(abs(self.matrix).max()), 1.0)
        for idx in self.blocks():
            B = self.matrix[idx][:, idx].toarray()
            w, V = sla.eigh(B)
            res = np.abs(B @ V - V * w).max() if len(w) else 0.0
            worst = max(worst, res)
            out.append((idx, w, V))
        if worst > 1e-8 * scale:
            raise ConvergenceError("eigendecomposition residual too large", worst / scale)
        self._eig = out
        return out

    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.concatenate([w for _, w, _ in self.eigh()]))

    def matmul(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if self.K != other.K or self.theta != other.theta:
            raise InputError("operator matrices live on different bases")
        return OperatorMatrix(self.K, self.n, self.theta, (self.matrix @ other.matrix).tocsr(),
                              False, self.band + other.band)


def _symbol_floor(S: ClassicalSymbol):
    from .functional_calculus import _sphere_directions, leading_spectrum
    try:
        eigs = leading_spectrum(S, _sphere_directions(S.n))
    except Exception:
        return None
    lo = min(float(np.min(np.real(e))) for e in eigs)
    return lo if lo > 0 else None


def operator_matrix(op, K: int, hermitian: bool | None = None) -> OperatorMatrix:
    """Matrix of a differential symbol, a MultiplierCoefficient or an NCElement (L_a)."""
    if isinstance(op, NCElement):
        op = MultiplierCoefficient.left(op)
    if isinstance(op, MultiplierCoefficient):
        band, w = _coefficient_profile([op], op.n)
        if band > K:
            raise InputError(f"K={K} is smaller than the coefficient support {band}")
        M = op.matrix(K)
        herm = hermitian if hermitian is not None else op.adjoint() == op
        return OperatorMatrix(K, op.n, op.theta, M, bool(herm), band, w)
    if not isinstance(op, ClassicalSymbol):
        raise InputError(f"cannot realise {type(op).__name__}")
    if not op.is_differential():
        return _symbol_matrix(op, K, hermitian)
    terms = differential_terms(op)
    n = op.n
    band, w = _coefficient_profile([c for _, c in terms], n)
    if band >= K:
        raise InputError(f"K={K} is too small for coefficient support {band}")
    pts = _box_points(K, n).astype(float)
    D = len(pts)
    M = sp.csr_matrix((D, D), dtype=np.complex128)
    for alpha, c in terms:
        mono = np.prod(pts ** np.asarray(alpha, float), axis=1)
        M = M + (c.matrix(K) @ sp.diags(mono)).tocsr()
    M.eliminate_zeros()
    if hermitian is None:
        d = M - M.getH()
        hermitian = (abs(d).max() if d.nnz else 0.0) <= 1e-10 * max(1.0, abs(M).max())
    floor = _symbol_floor(op) if hermitian and op.order == 2 else None
    return OperatorMatrix(K, n, op.theta, M.tocsr(), bool(hermitian), band, w, floor)


def _symbol_matrix(S: ClassicalSymbol, K: int, hermitian):
    """Approximate realisation via the full symbol evaluated at lattice frequencies."""
    if S.full is None:
        raise InputError("a non-differential symbol needs its full symbol for realisation")
    n = S.n
    pts = _box_points(K, n)
    ctx = EvalContext(S.theta)
    rows, cols, data = [], [], []
    for j, m in enumerate(pts):
        mc = evaluate_expr(S.full, S.theta, m.astype(float), None, ctx)
        r, _, d = _kernels.multiplier_entries(mc.keys, mc.vals.reshape(1, -1), m[None, :],
                                              S.theta.entries, K)
        rows.append(r)
        cols.append(np.full(len(r), j))
        data.append(d)
    M = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(pts), len(pts)))
    return OperatorMatrix(K, n, S.theta, M, bool(hermitian), 0)


# ---------------------------------------------------------------------------
# heat traces
# ---------------------------------------------------------------------------

def _shell_sums(K, n, s):
    """e^{-s |m|^2} summed over each shell |m|_inf = r, r = 0..K."""
    one = np.exp(-s * np.arange(K + 1, dtype=float) ** 2)
    cum = np.cumsum(np.concatenate([[one[0]], 2 * one[1:]]))  # box sums per radius (1-D)
    box = cum ** n
    return np.diff(np.concatenate([[0.0], box]))


def tail_bound(M: OperatorMatrix, t: float, a_norm: float = 1.0) -> float:
    """Estimated truncation error of Tr(L_a e^{-tM}).

    Modes outside the box plus boundary-band modes weighted by the
    coefficient mass that couples them across the boundary.
    """
    c = M.floor
    if c is None:
        pts = M.points.astype(float)
        r2 = (pts ** 2).sum(axis=1)
        d = np.real(M.matrix.diagonal())
        sel = r2 > 0
        c = float(np.min(d[sel] / r2[sel])) if sel.any() else 1.0
        c = max(c, 1e-6)
    s = t * c * 0.9
    Kbig = M.K + int(math.ceil(math.sqrt(60.0 / s))) + 2
    shells = _shell_sums(Kbig, M.n, s)
    outside = shells[M.K + 1:].sum()
    band = 0.0
    for d, w in enumerate(M.profile):
        band += w * shells[M.K - d]
    return float(a_norm * (outside + band))


def heat_trace(M: OperatorMatrix, a=None, t: float = 0.05, tol: float | None = None,
               with_tail: bool = False):
    """Tr(L_a e^{-tM}) from the block eigendecomposition.

    Rejects t whose tail bound exceeds tol * |value| when tol is given.
    """
    if t <= 0:
        raise InputError("t must be positive")
    A = None
    a_norm = 1.0
    if a is not None:
        if isinstance(a, NCElement):
            a_norm = a.norm1()
            a = MultiplierCoefficient.left(a)
        A = a.matrix(M.K).tocsr()
        a_norm = max(a_norm, float(np.abs(a.vals).sum()))
    total = 0j
    for idx, w, V in M.eigh():
        f = np.exp(-t * w)
        if A is None:
            total += f.sum()
        else:
            Ab = A[idx][:, idx]
            if Ab.nnz == 0:
                continue
            diag = np.einsum("ik,ik->k", V.conj(), Ab @ V)
            total += np.dot(f, diag)
    tail = tail_bound(M, t, a_norm)
    if tol is not None and tail > tol * max(abs(total), 1e-300):
        raise InputError(f"t={t} lies below the trusted window (tail bound {tail:.3e})")
    val = total if a is not None else total.real
    return (val, tail) if with_tail else val


@dataclass
class HeatSamples:
    t: np.ndarray
    values: np.ndarray
    tails: np.ndarray
    rejected: list


def heat_samples(M: OperatorMatrix, a=None, window=(0.02, 0.1), count: int = 24,
                 trust: float = 1e-8) -> HeatSamples:
    """Heat-trace samples on a geometric t-grid; untrusted t are dropped and listed.

    A sample is trusted when its tail bound is below ``trust`` times the
    scale ||a||_1 Tr(e^{-tM}), which bounds |Tr(L_a e^{-tM})| and stays
    meaningful when the trace itself cancels to nearly zero.
    """
    ts = np.geomspace(window[0], window[1], count)
    a_norm = 1.0
    if isinstance(a, NCElement):
        a_norm = a.norm1()
    elif isinstance(a, MultiplierCoefficient):
        a_norm = float(np.abs(a.vals).sum())
    keep_t, vals, tails, rejected = [], [], [], []
    for t in ts:
        v, tail = heat_trace(M, a, t, with_tail=True)
        scale = a_norm * heat_trace(M, None, t) if a is not None else abs(v)
        if tail > trust * scale:
            rejected.append((float(t), float(tail)))
            continue
        keep_t.append(t)
        vals.append(v)
        tails.append(tail)
    return HeatSamples(np.array(keep_t), np.array(vals), np.array(tails), rejected)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    exponents: tuple
    coefficients: np.ndarray
    residual: float
    condition: float
    window: tuple
    samples: int

    @property
    def trusted(self) -> bool:
        return self.condition <= 1e8

    def coefficient(self, e) -> complex:
        for x, c in zip(self.exponents, self.coefficients):
            if abs(x - e) < 1e-12:
                return complex(c)
        raise KeyError(e)

    def to_table(self) -> str:
        lines = ["exponent\tcoef_re\tcoef_im\tresidual\tcondition\ttrusted"]
        for e, c in zip(self.exponents, self.coefficients):
            c = complex(c)
            lines.append(f"{e:.12g}\t{c.real:.15g}\t{c.imag:.15g}\t{self.residual:.3g}\t"
                         f"{self.condition:.3g}\t{int(self.trusted)}")
        return "\n".join(lines) + "\n"


def fit_expansion(samples, exponents) -> FitResult:
    """Least squares on the basis t^{e_j}; samples are (t, value) pairs or HeatSamples."""
    if isinstance(samples, HeatSamples):
        t, y = samples.t, samples.values
    else:
        arr = list(samples)
        t = np.array([s[0] for s in arr], float)
        y = np.array([s[1] for s in arr])
    exponents = tuple(float(e) for e in exponents)
    if len(t) < 2 * len(exponents):
        raise InputError(f"need at least {2 * len(exponents)} samples, got {len(t)}")
    X = t[:, None] ** np.array(exponents)[None, :]
    s = np.linalg.svd(X, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    if not np.isfinite(cond) or s[-1] < 1e-14 * s[0]:
        raise ConvergenceError(f"rank-deficient design (condition {cond:.3e})")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = float(np.linalg.norm(X @ coef - y))
    return FitResult(exponents, coef, res, cond, (float(t.min()), float(t.max())), len(t))


# ---------------------------------------------------------------------------
# Epstein zeta of Z^n
# ---------------------------------------------------------------------------

def _shell_counts(n, K):
    ax = np.arange(-K, K + 1)
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    r2 = sum(g.astype(np.int64) ** 2 for g in grids).ravel()
    r2 = r2[r2 > 0]
    vals, counts = np.unique(r2, return_counts=True)
    sel = vals <= K * K  # complete shells only
    return vals[sel], counts[sel]


def epstein_zeta(z, K: int = 7, n: int = 2, with_error: bool = False, dps: int = 30):
    """Z(z) = sum over nonzero k in Z^n of |k|^{-2z}, analytically continued.

    Uses the incomplete-Gamma splitting of the theta-function Mellin
    integral; the neglected shells decay like exp(-pi K^2).
    """
    z = mpmath.mpc(z)
    with mpmath.workdps(dps):
        if abs(z - mpmath.mpf(n) / 2) < mpmath.mpf(10) ** (-12):
            raise InputError("Epstein zeta has a pole at z = n/2")
        h = mpmath.mpf(n) / 2
        vals, counts = _shell_counts(n, K)
        last = mpmath.mpf(0)
        s = mpmath.mpf(0)
        for m, c in zip(vals, counts):
            x = mpmath.pi * int(m)
            term = c * (mpmath.gammainc(z, x) * x ** (-z) + mpmath.gammainc(h - z, x) * x ** (z - h))
            s += term
            last = term
        # Z(z) = pi^z z F(z) / Gamma(z + 1) with F(z) = -1/z - 1/(h - z) + s; regular at z = 0
        pref = mpmath.pi ** z / mpmath.gamma(z + 1)
        val = pref * (-1 - z / (h - z) + z * s)
        err = abs(z * last * pref)
    out = complex(val)
    if err > 1e-10 * max(1.0, abs(out)):
        raise ConvergenceError("Epstein zeta shells too few; raise K", float(err))
    return (out, float(err)) if with_error else out


# ---------------------------------------------------------------------------
# binary export
# ---------------------------------------------------------------------------

MAGIC = b"NCRESMAT"


def export_binary(path, array) -> None:
    """Container: 8-byte magic, uint32 version, uint32 ndim, uint64 shape[ndim],
    then raw little-endian complex128 data in C order."""
    a = np.ascontiguousarray(np.asarray(array, dtype="<c16"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", 1, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))


def import_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise InputError("not an ncres binary container")
        version, ndim = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise InputError(f"unsupported container version {version}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != int(np.prod(shape)):
        raise InputError("container payload does not match its shape header")
    return data.reshape(shape).astype(np.complex128)
