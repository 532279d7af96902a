"""Hot loops shared by the algebra, the symbol evaluator and the oracle.

Each kernel exists twice: a numba ``@njit`` version and a pure numpy
version.  Which one backs the public names is decided once, at import,
from the ``NCRES_DISABLE_NUMBA`` environment variable (any non-empty value
other than ``0`` selects numpy).  Both versions are always importable under
their suffixed names so the benchmark can time them side by side.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

_flag = os.environ.get("NCRES_DISABLE_NUMBA", "").strip()
_WANT_NUMBA = _flag in ("", "0")

try:
    import numba as nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and _WANT_NUMBA


def _njit(*args, **kwargs):
    if HAVE_NUMBA:
        return nb.njit(*args, cache=True, **kwargs)

    def wrap(f):
        return f
    return wrap


# ---------------------------------------------------------------------------
# twisted convolution of sparse coefficient tables
# ---------------------------------------------------------------------------

def output_box(ka, kb, lo_trunc, hi_trunc):
    """Bounding box of all pairwise key sums, clipped to the truncation box."""
    lo = ka.min(axis=0) + kb.min(axis=0)
    hi = ka.max(axis=0) + kb.max(axis=0)
    lo = np.maximum(lo, lo_trunc)
    hi = np.minimum(hi, hi_trunc)
    return lo.astype(np.int64), hi.astype(np.int64)


@_njit
def _twisted_nb(ka, va, kb, vb, theta, lo, hi):
    na, d = ka.shape
    nbk = kb.shape[0]
    ba = va.shape[0]
    bb = vb.shape[0]
    B = max(ba, bb)
    shape = hi - lo + 1
    size = 1
    for p in range(d):
        size *= shape[p]
    stride = np.empty(d, np.int64)
    s = 1
    for p in range(d - 1, -1, -1):
        stride[p] = s
        s *= shape[p]
    out = np.zeros((B, size), np.complex128)
    touched = np.zeros(size, np.bool_)
    kt = np.zeros((na, d))
    for i in range(na):
        for q in range(d):
            acc = 0.0
            for p in range(d):
                acc += ka[i, p] * theta[p, q]
            kt[i, q] = acc
    for i in range(na):
        for j in range(nbk):
            idx = 0
            ok = True
            for p in range(d):
                c = ka[i, p] + kb[j, p]
                if c < lo[p] or c > hi[p]:
                    ok = False
                    break
                idx += (c - lo[p]) * stride[p]
            if not ok:
                continue
            ang = 0.0
            for q in range(d):
                ang += kt[i, q] * kb[j, q]
            ph = np.cos(np.pi * ang) - 1j * np.sin(np.pi * ang)
            touched[idx] = True
            for b in range(B):
                x = va[b if ba > 1 else 0, i] * vb[b if bb > 1 else 0, j]
                out[b, idx] += x * ph
    return out, touched


def _twisted_np(ka, va, kb, vb, theta, lo, hi):
    d = ka.shape[1]
    shape = hi - lo + 1
    size = int(np.prod(shape))
    stride = np.ones(d, np.int64)
    for p in range(d - 2, -1, -1):
        stride[p] = stride[p + 1] * shape[p + 1]
    keys = ka[:, None, :] + kb[None, :, :]
    ok = np.all((keys >= lo) & (keys <= hi), axis=2)
    ii, jj = np.nonzero(ok)
    idx = ((keys[ii, jj] - lo) * stride).sum(axis=1)
    ang = np.einsum("ip,pq,iq->i", ka[ii].astype(float), theta, kb[jj].astype(float))
    ph = np.exp(-1j * np.pi * ang)
    B = max(va.shape[0], vb.shape[0])
    prod = va[:, ii] * vb[:, jj] * ph
    prod = np.broadcast_to(prod, (B, len(ii)))
    S = sp.csr_matrix((np.ones(len(ii)), (np.arange(len(ii)), idx)),
                      shape=(len(ii), size))
    out = np.asarray((S.T @ prod.T).T) if len(ii) else np.zeros((B, size), complex)
    touched = np.zeros(size, bool)
    touched[idx] = True
    return out.astype(np.complex128), touched


def twisted_numba(ka, va, kb, vb, theta, lo, hi):
    return _twisted_nb(ka, va, kb, vb, theta, lo, hi)


twisted_numpy = _twisted_np


def twisted_product(ka, va, kb, vb, theta, lo_trunc, hi_trunc):
    """Twisted convolution (ab)_m = sum a_k b_l exp(-i pi <k, theta l>).

    ``va`` and ``vb`` carry a leading batch axis (length 1 broadcasts).
    Returns the nonzero keys in lexicographic order and the batched values.
    """
    d = ka.shape[1]
    B = max(va.shape[0], vb.shape[0])
    if ka.shape[0] == 0 or kb.shape[0] == 0:
        return np.zeros((0, d), np.int64), np.zeros((B, 0), np.complex128)
    lo, hi = output_box(ka, kb, lo_trunc, hi_trunc)
    if np.any(hi < lo):
        return np.zeros((0, d), np.int64), np.zeros((B, 0), np.complex128)
    fn = twisted_numba if USING_NUMBA else twisted_numpy
    out, touched = fn(np.ascontiguousarray(ka), np.ascontiguousarray(va),
                      np.ascontiguousarray(kb), np.ascontiguousarray(vb),
                      np.ascontiguousarray(theta, dtype=float), lo, hi)
    flat = np.nonzero(touched)[0]
    vals = out[:, flat]
    keep = np.any(vals != 0, axis=0)
    flat = flat[keep]
    keys = np.stack(np.unravel_index(flat, tuple(hi - lo + 1)), axis=1) + lo
    return keys.astype(np.int64), vals[:, keep]


# ---------------------------------------------------------------------------
# multiplier matrices on the truncated GNS basis
# ---------------------------------------------------------------------------

@_njit
def _mult_entries_nb(keys, vals, cols, theta, K):
    # keys: (N, 2n) pairs (k, l); vals: (C or 1, N); cols: (C, n)
    N = keys.shape[0]
    n = cols.shape[1]
    C = cols.shape[0]
    bv = vals.shape[0]
    side = 2 * K + 1
    rows = np.empty(C * N, np.int64)
    cidx = np.empty(C * N, np.int64)
    data = np.empty(C * N, np.complex128)
    cnt = 0
    for c in range(C):
        for t in range(N):
            v = vals[c if bv > 1 else 0, t]
            if v == 0:
                continue
            ok = True
            r = 0
            for p in range(n):
                tp = keys[t, p] + cols[c, p] + keys[t, n + p]
                if tp < -K or tp > K:
                    ok = False
                    break
                r = r * side + (tp + K)
            if not ok:
                continue
            ang = 0.0
            for p in range(n):
                for q in range(n):
                    th = theta[p, q]
                    if th != 0.0:
                        ang += keys[t, p] * th * cols[c, q]
                        ang += (keys[t, p] + cols[c, p]) * th * keys[t, n + q]
            rows[cnt] = r
            cidx[cnt] = c
            data[cnt] = v * (np.cos(np.pi * ang) - 1j * np.sin(np.pi * ang))
            cnt += 1
    return rows[:cnt], cidx[:cnt], data[:cnt]


def _mult_entries_np(keys, vals, cols, theta, K):
    n = cols.shape[1]
    k = keys[:, :n]
    l = keys[:, n:]
    tgt = k[None, :, :] + cols[:, None, :] + l[None, :, :]
    ok = np.all(np.abs(tgt) <= K, axis=2)
    V = np.broadcast_to(vals, (cols.shape[0], keys.shape[0]))
    ok &= V != 0
    cc, tt = np.nonzero(ok)
    side = 2 * K + 1
    r = np.zeros(len(cc), np.int64)
    for p in range(n):
        r = r * side + (tgt[cc, tt, p] + K)
    m = cols[cc].astype(float)
    kk = k[tt].astype(float)
    ll = l[tt].astype(float)
    ang = np.einsum("ip,pq,iq->i", kk, theta, m) + np.einsum("ip,pq,iq->i", kk + m, theta, ll)
    data = V[cc, tt] * np.exp(-1j * np.pi * ang)
    return r, cc.astype(np.int64), data


def mult_entries_numba(keys, vals, cols, theta, K):
    return _mult_entries_nb(keys, vals, cols, theta, K)


mult_entries_numpy = _mult_entries_np


def multiplier_entries(keys, vals, cols, theta, K):
    """COO entries of column-wise multipliers acting on basis vectors U_m.

    Column c holds the image of U_{cols[c]} under sum_t vals[c, t] L_{U_k} R_{U_l}.
    Row indices address the box |m|_inf <= K in row-major order.
    """
    fn = mult_entries_numba if USING_NUMBA else mult_entries_numpy
    return fn(np.ascontiguousarray(keys, dtype=np.int64),
              np.ascontiguousarray(vals, dtype=np.complex128),
              np.ascontiguousarray(cols, dtype=np.int64),
              np.ascontiguousarray(theta, dtype=float), int(K))


# ---------------------------------------------------------------------------
# lattice sums
# ---------------------------------------------------------------------------

@_njit
def _shell_histogram_nb(K, n):
    side = 2 * K + 1
    total = 1
    for _ in range(n):
        total *= side
    counts = np.zeros(n * K * K + 1, np.int64)
    for flat in range(total):
        f = flat
        r2 = 0
        for p in range(n):
            x = f % side - K
            f //= side
            r2 += x * x
        counts[r2] += 1
    return counts


def _lattice_power_nb(K, n, z):
    counts = _shell_histogram_nb(K, n)
    r2 = np.flatnonzero(counts)
    r2 = r2[r2 > 0]
    return complex(np.sum(counts[r2] * np.exp(-z * np.log(r2.astype(float)))))


def _lattice_power_np(K, n, z):
    ax = np.arange(-K, K + 1)
    r2 = ax.astype(float) ** 2
    for _ in range(n - 1):
        r2 = (r2[..., None] + ax.astype(float) ** 2).ravel()
    r2 = r2[r2 > 0]
    # fixed ascending order keeps the reduction reproducible
    return complex(np.sum(np.exp(-z * np.log(np.sort(r2)))))


def lattice_power_numba(K, n, z):
    return _lattice_power_nb(int(K), int(n), complex(z))


lattice_power_numpy = _lattice_power_np


def lattice_power_sum(K, n, z):
    """sum over 0 < |m|_inf <= K of |m|^(-2z)."""
    fn = lattice_power_numba if USING_NUMBA else lattice_power_numpy
    return fn(int(K), int(n), complex(z))


def lattice_gauss_sum(K, n, t):
    """sum over |m|_inf <= K of exp(-t |m|^2), vectorised in t."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    ax = np.arange(-K, K + 1, dtype=float) ** 2
    one = np.exp(-np.outer(t, ax)).sum(axis=1)
    return one ** n
