"""GF(256) arithmetic checked exhaustively against a bitwise oracle."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isnc import gf256
from isnc.errors import DomainError
from oracles import slow_mul

ALL = np.arange(256, dtype=np.uint8)


def test_mul_table_matches_bitwise_oracle():
    for a in range(256):
        for b in range(256):
            assert gf256.MUL[a, b] == slow_mul(a, b)


def test_field_axioms_exhaustive():
    M = gf256.MUL
    a = ALL[:, None]
    b = ALL[None, :]
    assert np.array_equal(M, M.T)  # commutativity
    assert np.all(M[1] == ALL) and np.all(M[0] == 0)  # identities
    # associativity and distributivity over all triples
    for c in range(256):
        assert np.array_equal(M[M[a, b], c], M[a, M[b, c]])
        assert np.array_equal(M[a, b ^ np.uint8(c)], M[a, b] ^ M[a, c])
    inv = gf256.INV
    for x in range(1, 256):
        assert M[x, inv[x]] == 1
    assert all((a_ ^ a_) == 0 for a_ in range(256))  # additive inverse


def test_scalar_helpers():
    assert gf256.add(0x53, 0xCA) == 0x99
    assert gf256.mul(0x53, gf256.inv(0x53)) == 1
    assert gf256.div(gf256.mul(7, 9), 9) == 7
    with pytest.raises(DomainError):
        gf256.inv(0)


def _reference_rank(m):
    """Row reduction with the bitwise oracle, independent of the tables."""
    m = [list(map(int, r)) for r in m]
    rank, cols = 0, len(m[0]) if m else 0
    for c in range(cols):
        piv = next((i for i in range(rank, len(m)) if m[i][c]), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        iv = next(x for x in range(1, 256) if slow_mul(m[rank][c], x) == 1)
        m[rank] = [slow_mul(iv, v) for v in m[rank]]
        for i in range(len(m)):
            if i != rank and m[i][c]:
                f = m[i][c]
                m[i] = [v ^ slow_mul(f, w) for v, w in zip(m[i], m[rank])]
        rank += 1
    return rank


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0, 0.9))
def test_rank_and_rref_agree_with_reference(nr, nc, seed, zero_frac):
    r = np.random.default_rng(seed)
    m = r.integers(0, 256, (nr, nc), dtype=np.uint8)
    m[r.random((nr, nc)) < zero_frac] = 0
    ref = _reference_rank(m)
    assert gf256.rank(m) == ref
    mat = np.zeros((nr + 1, nc), np.uint8)
    piv = np.zeros(nr + 1, np.int64)
    n = 0
    for row in m:
        if gf256.rref_insert(mat, piv, n, row.copy(), nc, gf256.MUL, gf256.INV) >= 0:
            n += 1
    assert n == ref


@given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_combine_is_linear(k, w, seed):
    r = np.random.default_rng(seed)
    rows = r.integers(0, 256, (k, w), dtype=np.uint8)
    a = r.integers(0, 256, k, dtype=np.uint8)
    b = r.integers(0, 256, k, dtype=np.uint8)
    lhs = gf256.combine(a ^ b, rows)
    assert np.array_equal(lhs, gf256.combine(a, rows) ^ gf256.combine(b, rows))
    expect = np.zeros(w, np.uint8)
    for i in range(k):
        expect ^= np.array([slow_mul(int(a[i]), int(v)) for v in rows[i]], np.uint8)
    assert np.array_equal(gf256.combine(a, rows), expect)
