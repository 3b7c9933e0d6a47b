"""Trusted-dealer correlated randomness.

The dealer issues, strictly before the online phase, the material each
interactive protocol consumes: Beaver triples (elementwise / matmul /
conv geometry), square pairs, truncation pairs and Z2 bit triples.
Every item is single-use; reuse raises.

Truncation pairs mask only down to a multiple of 2^f (the masked opening
reveals the f low bits of the offset value) and draw the mask from half
the ring so the opening never wraps; that is the price of bit-exact
rescaling with a one-round open.  See the per-party file format PCR1 at
the bottom for the CLI's offline phase.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .ring import ContractError, FixedPointConfig, RingTensor, conv2d_plain, read_tensor, write_tensor
from .sharing import Party, ShareTensor, shr
from .transport import ProtocolAbort

KIND_MUL_ELEM = 1
KIND_MUL_MATMUL = 2
KIND_MUL_CONV = 3
KIND_SQUARE = 4
KIND_TRUNC = 5
KIND_SCALED_TRUNC = 6
KIND_BIT_TRIPLE = 7

_KIND_NAMES = {
    KIND_MUL_ELEM: "elem-triple",
    KIND_MUL_MATMUL: "matmul-triple",
    KIND_MUL_CONV: "conv-triple",
    KIND_SQUARE: "square-pair",
    KIND_TRUNC: "trunc-pair",
    KIND_SCALED_TRUNC: "scaled-trunc-pair",
    KIND_BIT_TRIPLE: "bit-triple",
}


def apply_bilinear(kind: int, x: RingTensor, y: RingTensor, stride: int = 1, pad: int = 0) -> RingTensor:
    """The declared product for a triple kind: Hadamard, matmul or conv."""
    if kind == KIND_MUL_ELEM:
        return x * y
    if kind == KIND_MUL_MATMUL:
        return x.matmul(y)
    if kind == KIND_MUL_CONV:
        return conv2d_plain(x, y, stride, pad)
    raise ContractError(f"not a multiplicative kind: {kind}")


@dataclass
class CorrelatedHalf:
    """One party's half of a dealer-issued item."""

    kind: int
    party: Party
    tensors: dict  # name -> RingTensor (this party's shares)
    meta: dict = field(default_factory=dict)  # public parameters (f, q_enc, stride, ...)
    used: bool = False

    def consume(self) -> "CorrelatedHalf":
        if self.used:
            raise ContractError(f"{_KIND_NAMES[self.kind]} reused; issued items are single-use")
        self.used = True
        return self

    def expect(self, kind: int):
        if self.kind != kind:
            raise ProtocolAbort(
                f"randomness stream mismatch: need {_KIND_NAMES[kind]}, got {_KIND_NAMES[self.kind]}"
            )
        return self


class RandomnessStore:
    """Ordered per-party stream of correlated halves, consumed FIFO."""

    def __init__(self, halves: list[CorrelatedHalf] | None = None):
        self._items = list(halves or [])
        self._pos = 0

    def push(self, half: CorrelatedHalf) -> None:
        self._items.append(half)

    def next(self, kind: int) -> CorrelatedHalf:
        if self._pos >= len(self._items):
            raise ProtocolAbort(f"correlated randomness exhausted (wanted {_KIND_NAMES[kind]})")
        half = self._items[self._pos]
        self._pos += 1
        return half.expect(kind)

    def __len__(self) -> int:
        return len(self._items) - self._pos


class Dealer:
    """Generates correlated randomness; retains nothing after issuance."""

    def __init__(self, seed: int, fp: FixedPointConfig):
        self.rng = np.random.default_rng(seed)
        self.fp = fp

    def _split(self, kind: int, tensors: dict, meta: dict | None = None):
        halves = []
        for party in (Party.S0, Party.S1):
            halves.append(CorrelatedHalf(kind, party, {}, dict(meta or {})))
        for name, value in tensors.items():
            s0, s1 = shr(value, self.rng)
            halves[0].tensors[name] = s0.value
            halves[1].tensors[name] = s1.value
        return halves[0], halves[1]

    def mul_triple(self, shape_x, shape_y, kind: int = KIND_MUL_ELEM, stride: int = 1, pad: int = 0):
        a = RingTensor.random(shape_x, self.rng, self.fp)
        b = RingTensor.random(shape_y, self.rng, self.fp)
        z = apply_bilinear(kind, a, b, stride, pad)
        return self._split(kind, {"a": a, "b": b, "z": z}, {"stride": stride, "pad": pad})

    def square_pair(self, shape):
        a = RingTensor.random(shape, self.rng, self.fp)
        return self._split(KIND_SQUARE, {"a": a, "z": a * a})

    def trunc_pair(self, shape, frac_bits: int | None = None):
        """Mask R = 2^f * V, V uniform over [0, 2^(w-1-f)); Rt = V."""
        f = self.fp.frac_bits if frac_bits is None else frac_bits
        w = self.fp.total_bits
        v = self.rng.integers(0, 1 << (w - 1 - f), size=shape, dtype=np.uint64)
        vt = RingTensor(v, self.fp)
        r = vt.scale_by(1 << f)
        return self._split(KIND_TRUNC, {"r": r, "rt": vt}, {"f": f})

    def scaled_trunc_pair(self, shape, q_enc: int, frac_bits: int | None = None):
        """Like trunc_pair but the public rational q_enc/2^f is folded in:
        the pair rescales X (at scale 2f) straight to q*X at scale f."""
        f = self.fp.frac_bits if frac_bits is None else frac_bits
        w = self.fp.total_bits
        v = self.rng.integers(0, 1 << (w - 1 - f), size=shape, dtype=np.uint64)
        g = (int(q_enc) * v.astype(object)) >> f  # floor(q_enc * V / 2^f), exact ints
        vt = RingTensor(v, self.fp)
        gt = RingTensor.from_ints(g.astype(object), self.fp)
        return self._split(
            KIND_SCALED_TRUNC,
            {"r": vt.scale_by(1 << f), "g": gt},
            {"f": f, "q_enc": int(q_enc)},
        )

    def bit_triples(self, shape):
        """XOR-shared Z2 triples with z = a AND b, as 0/1 uint8 arrays."""
        bit_fp = FixedPointConfig(8, 0)
        a = RingTensor(self.rng.integers(0, 2, size=shape, dtype=np.uint64), bit_fp)
        b = RingTensor(self.rng.integers(0, 2, size=shape, dtype=np.uint64), bit_fp)
        z = a * b
        halves = [CorrelatedHalf(KIND_BIT_TRIPLE, p, {}, {}) for p in (Party.S0, Party.S1)]
        for name, value in (("a", a), ("b", b), ("z", z)):
            mask = RingTensor(self.rng.integers(0, 2, size=shape, dtype=np.uint64), bit_fp)
            halves[0].tensors[name] = mask
            halves[1].tensors[name] = RingTensor((value.data ^ mask.data), bit_fp)
        return halves[0], halves[1]


# -- per-party file format PCR1 ------------------------------------------

_PCR_MAGIC = b"PCR1"


def write_store(halves: list[CorrelatedHalf], path) -> None:
    out = [_PCR_MAGIC, struct.pack("<BI", 1, len(halves))]
    for h in halves:
        meta = struct.pack(
            "<BBiiii",
            h.kind,
            int(h.party),
            h.meta.get("f", -1),
            h.meta.get("q_enc", 0),
            h.meta.get("stride", 1),
            h.meta.get("pad", 0),
        )
        names = sorted(h.tensors)
        body = struct.pack("<B", len(names))
        for name in names:
            nb = name.encode()
            body += struct.pack("<B", len(nb)) + nb + write_tensor(h.tensors[name])
        out.append(meta + body)
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_store(path) -> RandomnessStore:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _PCR_MAGIC:
        raise ContractError("bad correlated-randomness magic")
    _, count = struct.unpack_from("<BI", buf, 4)
    offset = 9
    halves = []
    for _ in range(count):
        kind, party, f, q_enc, stride, pad = struct.unpack_from("<BBiiii", buf, offset)
        offset += struct.calcsize("<BBiiii")
        (n_tensors,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        tensors = {}
        for _ in range(n_tensors):
            (nlen,) = struct.unpack_from("<B", buf, offset)
            offset += 1
            name = buf[offset : offset + nlen].decode()
            offset += nlen
            tensors[name], offset = read_tensor(buf, offset)
        meta = {"stride": stride, "pad": pad}
        if f >= 0:
            meta["f"] = f
        if kind == KIND_SCALED_TRUNC:
            meta["q_enc"] = q_enc
        halves.append(CorrelatedHalf(kind, Party(party), tensors, meta))
    return RandomnessStore(halves)
