"""GF(2^8) arithmetic with log/antilog tables and jitted row elimination.

The field is built over the primitive polynomial x^8+x^4+x^3+x^2+1 (0x11D),
for which 2 generates the multiplicative group.
"""

from __future__ import annotations

import numba
import numpy as np

from .errors import DomainError

POLY = 0x11D
ORDER = 256


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= POLY
    exp[255:510] = exp[:255]
    a = np.arange(256)
    la = log[a]
    mul = exp[(la[:, None] + la[None, :]) % 255].astype(np.uint8)
    mul[0, :] = 0
    mul[:, 0] = 0
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[1:]) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL, INV = _build_tables()
for _t in (EXP, LOG, MUL, INV):
    _t.setflags(write=False)


def add(a: int, b: int) -> int:
    return a ^ b


def mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def inv(a: int) -> int:
    if a == 0:
        raise DomainError("zero has no multiplicative inverse in GF(256)")
    return int(INV[a])


def div(a: int, b: int) -> int:
    return mul(a, inv(b))


def scale(row: np.ndarray, c: int) -> np.ndarray:
    return MUL[c][row]


def combine(coeffs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Return ``sum_k coeffs[k] * rows[k]`` over GF(256)."""
    coeffs = np.asarray(coeffs, dtype=np.uint8)
    rows = np.asarray(rows, dtype=np.uint8)
    if rows.shape[0] == 0:
        return np.zeros(rows.shape[1:], dtype=np.uint8)
    return np.bitwise_xor.reduce(MUL[coeffs[:, None], rows], axis=0)


def rank(rows: np.ndarray) -> int:
    """Rank of a matrix over GF(256) (non-destructive, reference implementation)."""
    m = np.array(rows, dtype=np.uint8, copy=True)
    if m.ndim != 2:
        raise DomainError("rank expects a 2-D array")
    r = 0
    nrows, ncols = m.shape
    for c in range(ncols):
        hit = np.nonzero(m[r:, c])[0]
        if hit.size == 0:
            continue
        p = r + hit[0]
        m[[r, p]] = m[[p, r]]
        m[r] = MUL[INV[m[r, c]]][m[r]]
        for k in range(nrows):
            if k != r and m[k, c]:
                m[k] ^= MUL[m[k, c]][m[r]]
        r += 1
        if r == nrows:
            break
    return r


@numba.njit(cache=True)
def rref_insert(mat, pivots, nrows, row, ncoef, mul_t, inv_t):
    """Insert ``row`` into the reduced row-echelon matrix ``mat[:nrows]``.

    ``row`` is modified in place.  Only the first ``ncoef`` columns are
    eligible as pivots; trailing columns (payload) ride along.  Returns the new
    pivot column, or -1 if the row lies in the existing span.  On success the
    caller must bump ``nrows``; the row is stored at ``mat[nrows]``.
    """
    width = row.shape[0]
    for k in range(nrows):
        c = row[pivots[k]]
        if c != 0:
            mk = mul_t[c]
            src = mat[k]
            for j in range(width):
                row[j] ^= mk[src[j]]
    p = -1
    for j in range(ncoef):
        if row[j] != 0:
            p = j
            break
    if p < 0:
        return -1
    mi = mul_t[inv_t[row[p]]]
    for j in range(width):
        row[j] = mi[row[j]]
    for k in range(nrows):
        c = mat[k, p]
        if c != 0:
            mk = mul_t[c]
            dst = mat[k]
            for j in range(width):
                dst[j] ^= mk[row[j]]
    for j in range(width):
        mat[nrows, j] = row[j]
    pivots[nrows] = p
    return p


@numba.njit(cache=True)
def in_span(mat, pivots, nrows, row, ncoef, mul_t):
    """True when ``row[:ncoef]`` lies in the span of the stored rows."""
    tmp = row[:ncoef].copy()
    for k in range(nrows):
        c = tmp[pivots[k]]
        if c != 0:
            mk = mul_t[c]
            for j in range(ncoef):
                tmp[j] ^= mk[mat[k, j]]
    for j in range(ncoef):
        if tmp[j] != 0:
            return False
    return True


@numba.njit(cache=True)
def combine_pivot_rows(mat, pivots, nrows, first_pivot, inv_perm, a, mul_t, out):
    """Combine the rows of ``mat`` whose pivot is ``>= first_pivot`` with weights ``a``.

    The result is written to ``out`` in original column order
    (``out[c] = sum[inv_perm[c]]``).  ``a`` must hold one weight per selected
    row, in row order.
    """
    width = mat.shape[1]
    acc = np.zeros(width, dtype=np.uint8)
    j = 0
    for k in range(nrows):
        if pivots[k] >= first_pivot:
            w = a[j]
            j += 1
            if w != 0:
                for c in range(width):
                    acc[c] ^= mul_t[w, mat[k, c]]
    for c in range(width):
        out[c] = acc[inv_perm[c]]
