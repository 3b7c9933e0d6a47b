"""Additive 2-of-2 secret sharing over the ring.

A secret x is split as (r, x - r) with r uniform, so either share alone
is uniform and the sum reconstructs x modulo 2^w.  Scaling by a public
constant and addition are local (zero communication).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .ring import ContractError, FixedPointConfig, RingTensor, read_tensor, write_tensor


class Party(IntEnum):
    S0 = 0
    S1 = 1

    @property
    def other(self) -> "Party":
        return Party(1 - self)


@dataclass
class ShareTensor:
    """One party's additive share of a RingTensor."""

    party: Party
    value: RingTensor

    @property
    def fp(self) -> FixedPointConfig:
        return self.value.fp

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    def _check_same_party(self, other: "ShareTensor"):
        if self.party != other.party:
            raise ContractError("shares belong to different parties")

    def __add__(self, other: "ShareTensor") -> "ShareTensor":
        self._check_same_party(other)
        return ShareTensor(self.party, self.value + other.value)

    def __sub__(self, other: "ShareTensor") -> "ShareTensor":
        self._check_same_party(other)
        return ShareTensor(self.party, self.value - other.value)

    def __neg__(self) -> "ShareTensor":
        return ShareTensor(self.party, -self.value)

    def scale_by(self, k: int) -> "ShareTensor":
        return ShareTensor(self.party, self.value.scale_by(k))

    def add_public(self, v: RingTensor | int) -> "ShareTensor":
        """Add a public constant; only S0 contributes so rec() shifts once."""
        if self.party != Party.S0:
            return self
        if isinstance(v, int):
            shifted = RingTensor(self.data + np.uint64(v % self.fp.modulus), self.fp)
        else:
            shifted = self.value + v
        return ShareTensor(self.party, shifted)

    def reshape(self, *shape) -> "ShareTensor":
        return ShareTensor(self.party, self.value.reshape(*shape))


def shr(x: RingTensor, rng: np.random.Generator) -> tuple[ShareTensor, ShareTensor]:
    """Share generation: sample r uniform, return (r, x - r)."""
    r = RingTensor.random(x.shape, rng, x.fp)
    return ShareTensor(Party.S0, r), ShareTensor(Party.S1, x - r)


def rec(s0: ShareTensor, s1: ShareTensor) -> RingTensor:
    """Share recovery: modular sum of the two shares."""
    if s0.party == s1.party:
        raise ContractError("rec needs shares from both parties")
    if s0.shape != s1.shape:
        raise ContractError("share shape mismatch")
    return s0.value + s1.value


def affine_local(a: int, x: ShareTensor, y: ShareTensor) -> ShareTensor:
    """Local evaluation of a*X + Y on shares, a a public integer scalar."""
    x._check_same_party(y)
    return x.scale_by(a) + y


# -- serialization: PRT1 record + one party-id byte ----------------------


def write_share(s: ShareTensor) -> bytes:
    return write_tensor(s.value) + struct.pack("<B", int(s.party))


def read_share(buf: bytes, offset: int = 0) -> tuple[ShareTensor, int]:
    value, offset = read_tensor(buf, offset)
    (party,) = struct.unpack_from("<B", buf, offset)
    return ShareTensor(Party(party), value), offset + 1
