"""Online phase of the dealer-assisted protocols.

Each function here is SPMD: both parties call it with their own shares
and their end of the channel, and it returns that party's share of the
result.  Multiplication and square follow the one-round masked-opening
pattern; the opened difference values are uniform, so the transcript
reveals nothing about the operands.

Truncation opens X + Delta + R with R a multiple of 2^f drawn from half
the ring: the opening is wrap-free, so subtracting the dealer's shifted
mask yields the arithmetic shift of X bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dealer as cr
from .ring import ContractError, FixedPointConfig, RingTensor
from .sharing import Party, ShareTensor
from .transport import Channel, MsgType


@dataclass
class Session:
    """One party's protocol context: identity, channel, randomness."""

    party: Party
    ch: Channel
    fp: FixedPointConfig
    store: cr.RandomnessStore | None = None
    rng: np.random.Generator | None = None

    def share(self, value: RingTensor) -> ShareTensor:
        return ShareTensor(self.party, value)


def pack_words(*arrays: np.ndarray) -> bytes:
    return b"".join(a.astype("<u4").tobytes() for a in arrays)


def unpack_words(buf: bytes, shapes: list[tuple]) -> list[np.ndarray]:
    out, offset = [], 0
    for shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<u4", count=count, offset=offset)
        out.append(arr.astype(np.uint64).reshape(shape))
        offset += 4 * count
    return out


def _open_pair(sess: Session, msg: MsgType, e: RingTensor, f: RingTensor) -> tuple[RingTensor, RingTensor]:
    """Jointly recover two masked tensors in a single batched exchange."""
    peer = sess.ch.exchange(msg, pack_words(e.data, f.data))
    pe, pf = unpack_words(peer, [e.shape, f.shape])
    return e + RingTensor(pe, e.fp), f + RingTensor(pf, f.fp)


def mul_2pc(sess: Session, x: ShareTensor, y: ShareTensor, triple: cr.CorrelatedHalf) -> ShareTensor:
    """Beaver multiplication for the triple's declared product.

    Opens E = X - A and F = Y - B (one exchange), then evaluates
    R_i = -i * E@F + X_i@F + E@Y_i + Z_i locally.
    """
    if triple.kind not in (cr.KIND_MUL_ELEM, cr.KIND_MUL_MATMUL, cr.KIND_MUL_CONV):
        triple.expect(cr.KIND_MUL_ELEM)
    triple.consume()
    a, b, z = triple.tensors["a"], triple.tensors["b"], triple.tensors["z"]
    if a.shape != x.shape or b.shape != y.shape:
        raise ContractError(
            f"triple geometry {a.shape}x{b.shape} does not match operands {x.shape}x{y.shape}"
        )
    stride, pad = triple.meta.get("stride", 1), triple.meta.get("pad", 1 - 1)
    E, F = _open_pair(sess, MsgType.MUL_OPEN, x.value - a, y.value - b)

    def prod(u, v):
        return cr.apply_bilinear(triple.kind, u, v, stride, pad)

    r = prod(x.value, F) + prod(E, y.value) + z
    if sess.party == Party.S1:
        r = r - prod(E, F)
    return sess.share(r)


def square_2pc(sess: Session, x: ShareTensor, pair: cr.CorrelatedHalf) -> ShareTensor:
    """Elementwise square via a square pair.

    Opens E = X - A, then R_i = Z_i + 2E*A_i, with the public E*E term
    contributed by S1 only so reconstruction yields X^2 exactly.
    """
    pair.expect(cr.KIND_SQUARE).consume()
    a, z = pair.tensors["a"], pair.tensors["z"]
    if a.shape != x.shape:
        raise ContractError(f"square pair shape {a.shape} does not match operand {x.shape}")
    e = x.value - a
    peer = sess.ch.exchange(MsgType.SQ_OPEN, pack_words(e.data))
    (pe,) = unpack_words(peer, [e.shape])
    E = e + RingTensor(pe, e.fp)
    r = z + (E * a).scale_by(2)
    if sess.party == Party.S1:
        r = r + E * E
    return sess.share(r)


def _trunc_post(sess: Session, c: RingTensor, pair: cr.CorrelatedHalf) -> ShareTensor:
    """Local part of truncation once c = X + Delta + R is public."""
    w = sess.fp.total_bits
    f = pair.meta["f"]
    shifted = RingTensor(c.data >> np.uint64(f), sess.fp)
    if pair.kind == cr.KIND_TRUNC:
        out = -pair.tensors["rt"]
        if sess.party == Party.S0:
            out = out + shifted.scale_by(1) + RingTensor.from_ints(
                np.full(c.shape, -(1 << (w - 2 - f)), dtype=np.int64), sess.fp
            )
        return sess.share(out)
    # scaled truncation: H = floor(q_enc * (c - Delta) / 2^2f), minus dealer G
    q_enc = pair.meta["q_enc"]
    t_pub = c.data.astype(np.int64) - np.int64(1 << (w - 2))
    if abs(q_enc) * (1 << w) >= (1 << 62):
        raise ContractError("scaled truncation coefficient too large for exact arithmetic")
    h = (q_enc * t_pub) >> np.int64(2 * f)
    out = -pair.tensors["g"]
    if sess.party == Party.S0:
        out = out + RingTensor.from_ints(h, sess.fp)
    return sess.share(out)


def truncate_batch(sess: Session, items: list[tuple[ShareTensor, cr.CorrelatedHalf]]) -> list[ShareTensor]:
    """Open all masked values in one exchange, then rescale each.

    Precondition per item: |decoded X| < 2^(w - f - 2), so the offset
    value X + 2^(w-2) plus the half-ring mask never wraps.
    """
    w = sess.fp.total_bits
    masked = []
    for x, pair in items:
        if pair.kind not in (cr.KIND_TRUNC, cr.KIND_SCALED_TRUNC):
            pair.expect(cr.KIND_TRUNC)
        pair.consume()
        if pair.tensors["r"].shape != x.shape:
            raise ContractError("truncation pair shape mismatch")
        c = x.value + pair.tensors["r"]
        if sess.party == Party.S0:
            c = c + RingTensor.from_ints(np.full(x.shape, 1 << (w - 2), dtype=np.int64), sess.fp)
        masked.append(c)
    peer = sess.ch.exchange(MsgType.TRUNC_OPEN, pack_words(*(m.data for m in masked)))
    opened = unpack_words(peer, [m.shape for m in masked])
    out = []
    for (x, pair), mine, theirs in zip(items, masked, opened):
        c = mine + RingTensor(theirs, sess.fp)
        out.append(_trunc_post(sess, c, pair))
    return out


def truncate_2pc(sess: Session, x: ShareTensor, pair: cr.CorrelatedHalf) -> ShareTensor:
    """Exact fixed-point rescale: rec(result) == rec(X) >> f (arithmetic)."""
    return truncate_batch(sess, [(x, pair)])[0]
