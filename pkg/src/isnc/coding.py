"""Random linear network coding over GF(256) with inter-session mixing.

Every coded packet carries a global coefficient header covering the
``sum(N_s)`` source symbols of one generation.  A :class:`DecoderState` keeps
one reduced row-echelon matrix per tracked packet type ``t`` whose column order
puts the columns *outside* ``t`` first.  Rows whose pivot lands inside ``t``
then span exactly the part of the received space that lives on ``t``'s
columns, which gives both the decodability test and the recoding basis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import gf256
from .errors import CodingError, DecodeStateError
from .topology import all_types, sessions_of

_HEADER = struct.Struct(">IH")
_PLEN = struct.Struct(">H")


def column_offsets(blocks: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(blocks)]).astype(np.int64)


def type_columns(t: int, blocks: Sequence[int]) -> np.ndarray:
    off = column_offsets(blocks)
    return np.concatenate(
        [np.arange(off[s], off[s + 1]) for s in sessions_of(t)]
    ).astype(np.int64)


def support_type(coeffs: np.ndarray, blocks: Sequence[int]) -> int:
    """Mask of sessions whose header columns are not all zero."""
    off = column_offsets(blocks)
    mask = 0
    for s in range(len(blocks)):
        if coeffs[off[s]:off[s + 1]].any():
            mask |= 1 << s
    return mask


@dataclass(frozen=True, eq=False)
class CodedPacket:
    generation: int
    ptype: int
    coeffs: np.ndarray  # uint8, length sum(N_s)
    payload: bytes

    def to_bytes(self) -> bytes:
        return (
            _HEADER.pack(self.generation, self.ptype)
            + self.coeffs.astype(np.uint8).tobytes()
            + _PLEN.pack(len(self.payload))
            + self.payload
        )

    @classmethod
    def from_bytes(cls, data: bytes, header_len: int) -> "CodedPacket":
        need = _HEADER.size + header_len + _PLEN.size
        if len(data) < need:
            raise CodingError("truncated packet")
        gen, ptype = _HEADER.unpack_from(data, 0)
        pos = _HEADER.size
        coeffs = np.frombuffer(data, dtype=np.uint8, count=header_len, offset=pos).copy()
        pos += header_len
        (plen,) = _PLEN.unpack_from(data, pos)
        pos += _PLEN.size
        if len(data) != pos + plen:
            raise CodingError("payload length field does not match packet size")
        return cls(gen, ptype, coeffs, bytes(data[pos:]))

    def __eq__(self, other):
        if not isinstance(other, CodedPacket):
            return NotImplemented
        return (
            self.generation == other.generation
            and self.ptype == other.ptype
            and np.array_equal(self.coeffs, other.coeffs)
            and self.payload == other.payload
        )

    def __hash__(self):
        return hash((self.generation, self.ptype, self.coeffs.tobytes(), self.payload))


def _random_coeffs(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 256, size=n, dtype=np.uint8)


def recode(buffer: Sequence[CodedPacket], target: int, rng: np.random.Generator) -> CodedPacket:
    """Random GF(256) combination of ``buffer`` whose types all fit in ``target``."""
    if not buffer:
        raise CodingError("cannot recode from an empty buffer")
    gen = buffer[0].generation
    ptype = 0
    for p in buffer:
        if p.generation != gen:
            raise CodingError("buffer mixes generations")
        if p.ptype & ~target:
            raise CodingError(f"packet type {p.ptype:#x} is not a subtype of target {target:#x}")
        ptype |= p.ptype
    plens = {len(p.payload) for p in buffer}
    if len(plens) != 1:
        raise CodingError("payload lengths differ within the buffer")
    a = _random_coeffs(rng, len(buffer))
    rows = np.stack([p.coeffs for p in buffer])
    coeffs = gf256.combine(a, rows)
    plen = plens.pop()
    if plen:
        pay = np.stack([np.frombuffer(p.payload, dtype=np.uint8) for p in buffer])
        payload = gf256.combine(a, pay).tobytes()
    else:
        payload = b""
    return CodedPacket(gen, ptype, coeffs, payload)


class SourceEncoder:
    """Holds the original payloads of one generation for the sessions a node hosts."""

    def __init__(self, generation: int, blocks: Sequence[int], payloads: dict[int, np.ndarray]):
        self.generation = generation
        self.blocks = tuple(blocks)
        self.ncoef = int(sum(blocks))
        self.payloads = {s: np.asarray(v, dtype=np.uint8) for s, v in payloads.items()}
        lens = {v.shape[1] for v in self.payloads.values()}
        if len(lens) > 1:
            raise CodingError("payload lengths differ across sessions")
        self.payload_len = lens.pop() if lens else 0
        for s, v in self.payloads.items():
            if v.shape[0] != self.blocks[s]:
                raise CodingError(f"session {s} needs {self.blocks[s]} payloads, got {v.shape[0]}")
        self._off = column_offsets(self.blocks)
        self.hosted = 0
        for s in self.payloads:
            self.hosted |= 1 << s

    def encode(self, target: int, rng: np.random.Generator) -> CodedPacket:
        if target & ~self.hosted:
            raise CodingError(f"type {target:#x} includes sessions not hosted here")
        coeffs = np.zeros(self.ncoef, dtype=np.uint8)
        payload = np.zeros(self.payload_len, dtype=np.uint8)
        for s in sessions_of(target):
            a = _random_coeffs(rng, self.blocks[s])
            coeffs[self._off[s]:self._off[s + 1]] = a
            if self.payload_len:
                payload ^= gf256.combine(a, self.payloads[s])
        return CodedPacket(self.generation, target, coeffs, payload.tobytes())


class _Tracker:
    """RREF over a column permutation that puts ``t``'s columns last."""

    __slots__ = ("t", "perm", "inv_perm", "n_out", "dim", "mat", "pivots", "nrows", "inside")

    def __init__(self, t: int, blocks: Sequence[int], width: int):
        ncoef = int(sum(blocks))
        cols = type_columns(t, blocks)
        inside = np.zeros(ncoef, dtype=bool)
        inside[cols] = True
        out = np.nonzero(~inside)[0]
        self.t = t
        self.perm = np.concatenate([out, cols, np.arange(ncoef, width)]).astype(np.int64)
        self.inv_perm = np.argsort(self.perm)
        self.n_out = len(out)
        self.dim = len(cols)
        self.mat = np.zeros((ncoef + 1, width), dtype=np.uint8)
        self.pivots = np.zeros(ncoef + 1, dtype=np.int64)
        self.nrows = 0
        self.inside = 0  # rows whose pivot falls inside t

    def insert(self, row: np.ndarray, ncoef: int) -> bool:
        r = row[self.perm]
        p = gf256.rref_insert(
            self.mat, self.pivots, self.nrows, r, ncoef, gf256.MUL, gf256.INV
        )
        if p < 0:
            return False
        self.nrows += 1
        if p >= self.n_out:
            self.inside += 1
        return True

    @property
    def full(self) -> bool:
        return self.inside == self.dim

    def basis(self) -> np.ndarray:
        """Rows (original column order) spanning received space restricted to t."""
        sel = self.pivots[: self.nrows] >= self.n_out
        return self.mat[: self.nrows][sel][:, self.inv_perm]


class DecoderState:
    """Per-generation receive buffer and decoder of one node.

    ``track`` lists the packet types the node may decode through or recode
    into; the all-sessions type is always tracked and provides the innovation
    test.
    """

    def __init__(
        self,
        generation: int,
        blocks: Sequence[int],
        payload_len: int = 0,
        track: Iterable[int] | None = None,
    ):
        self.generation = generation
        self.blocks = tuple(int(b) for b in blocks)
        self.ncoef = sum(self.blocks)
        off = column_offsets(self.blocks)
        self._spans = [(off[s], off[s + 1]) for s in range(len(self.blocks))]
        self.payload_len = int(payload_len)
        self.width = self.ncoef + self.payload_len
        full = (1 << len(self.blocks)) - 1
        types = set(all_types(len(self.blocks)) if track is None else track)
        types.add(full)
        self._full = full
        self._trackers = {t: _Tracker(t, self.blocks, self.width) for t in sorted(types)}
        self._decodable_cache: set[int] | None = set()

    @property
    def rank(self) -> int:
        return self._trackers[self._full].nrows

    @property
    def tracked_types(self) -> list[int]:
        return list(self._trackers)

    def _as_row(self, p: CodedPacket) -> np.ndarray:
        if p.generation != self.generation:
            raise CodingError(
                f"packet of generation {p.generation} offered to decoder of generation {self.generation}"
            )
        if p.coeffs.shape != (self.ncoef,):
            raise CodingError("coefficient header length mismatch")
        if len(p.payload) != self.payload_len:
            raise CodingError("payload length mismatch")
        row = np.empty(self.width, dtype=np.uint8)
        row[: self.ncoef] = p.coeffs
        if self.payload_len:
            row[self.ncoef:] = np.frombuffer(p.payload, dtype=np.uint8)
        return row

    def insert(self, p: CodedPacket) -> bool:
        """Add ``p``; return True iff it was innovative (rank grew by one)."""
        row = self._as_row(p)
        if not self._trackers[self._full].insert(row, self.ncoef):
            return False
        for t, tr in self._trackers.items():
            if t != self._full:
                tr.insert(row, self.ncoef)
        self._decodable_cache = None
        return True

    def is_innovative(self, p: CodedPacket) -> bool:
        tr = self._trackers[self._full]
        row = self._as_row(p)[tr.perm]
        return not gf256.in_span(tr.mat, tr.pivots, tr.nrows, row, self.ncoef, gf256.MUL)

    def decodable_types(self) -> list[int]:
        return [t for t, tr in self._trackers.items() if tr.full]

    def decodable_sessions(self) -> set[int]:
        if self._decodable_cache is None:
            out: set[int] = set()
            for t, tr in self._trackers.items():
                if tr.full:
                    out.update(sessions_of(t))
            self._decodable_cache = out
        return set(self._decodable_cache)

    def is_decodable(self, s: int) -> bool:
        if self._decodable_cache is None:
            self.decodable_sessions()
        return s in self._decodable_cache

    def extract(self, s: int) -> np.ndarray:
        """Original payloads of session ``s`` as an ``(N_s, payload_len)`` array."""
        cands = [t for t, tr in self._trackers.items() if tr.full and t >> s & 1]
        if not cands:
            raise DecodeStateError(f"session {s} is not decodable yet (rank {self.rank})")
        tr = self._trackers[min(cands)]
        off = column_offsets(self.blocks)
        want = np.arange(off[s], off[s + 1])
        out = np.empty((len(want), self.payload_len), dtype=np.uint8)
        piv = tr.pivots[: tr.nrows]
        for i, col in enumerate(want):
            (k,) = np.nonzero(piv == tr.inv_perm[col])[0]
            out[i] = tr.mat[k, self.ncoef:]
        return out

    def recode(self, target: int, rng: np.random.Generator) -> CodedPacket | None:
        """Random combination of everything received that fits in ``target``.

        Returns None when nothing received so far lives on ``target``'s columns.
        """
        tr = self._trackers.get(target)
        if tr is None:
            raise CodingError(f"type {target:#x} is not tracked by this decoder")
        if tr.inside == 0:
            return None
        a = _random_coeffs(rng, tr.inside)
        row = np.empty(self.width, dtype=np.uint8)
        gf256.combine_pivot_rows(tr.mat, tr.pivots, tr.nrows, tr.n_out, tr.inv_perm, a, gf256.MUL, row)
        coeffs = row[: self.ncoef].copy()
        ptype = 0
        for s, (lo, hi) in enumerate(self._spans):
            if coeffs[lo:hi].any():
                ptype |= 1 << s
        if ptype == 0:
            # all-zero draw; still a legal (useless) packet of the basis support
            ptype = support_type(gf256.combine(np.ones(tr.inside, np.uint8), tr.basis()[:, : self.ncoef]), self.blocks)
        return CodedPacket(self.generation, ptype, coeffs, row[self.ncoef:].tobytes())

    def available_rank(self, target: int) -> int:
        return self._trackers[target].inside
