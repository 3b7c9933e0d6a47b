"""Millionaires comparison from 1-of-4 oblivious transfer.

The party holding M0 plays OT sender, the M1 holder plays receiver.
Values are split into 2-bit chunks, most significant first.  Per chunk
the sender offers, for each candidate chunk value j, the pair of bits
(M0_chunk > j, M0_chunk == j), XOR-masked with fresh sender bits; the
receiver obliviously picks the entry at its own chunk value and
re-randomizes, leaving both parties with XOR shares of per-chunk
greater/equal bits.  A log-depth tree of dealer-assisted Z2 ANDs then
folds the chunks into one strict-comparison bit: the first differing
chunk decides.

The OT is Diffie-Hellman masked: receiver sends R = g^rd1 * S^j, sender
derives per-candidate keys (R * S^-j')^rd0, and only the chosen
candidate's key matches the receiver's S^rd1.  Keys feed a hash-derived
XOR pad over fixed 32-bit payload entries, so the step-3 table is
exactly 4 x U x 32 bits per compared element.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import dealer as cr
from .protocol import Session, mul_2pc
from .ring import ContractError, RingTensor
from .sharing import Party, ShareTensor
from .transport import MsgType, ProtocolAbort

ENTRY_BYTES = 4  # fixed payload width per OT table entry


@dataclass(frozen=True)
class OtParams:
    """Public group and chunking parameters.

    The production default is the 31-bit Mersenne prime with generator 7
    so group elements fit the 32-bit wire words the cost model assumes;
    tests use m=23, g=5 for hand-checkable vectors.
    """

    prime: int = (1 << 31) - 1
    generator: int = 7
    chunk_bits: int = 2

    def __post_init__(self):
        if not 2 < self.prime < (1 << 32):
            raise ContractError("prime must fit a 32-bit wire word")
        if not 1 < self.generator < self.prime:
            raise ContractError("generator must lie in [2, m-1]")
        if self.chunk_bits != 2:
            raise ContractError("only 2-bit chunks are supported")

    @property
    def n_choices(self) -> int:
        return 1 << self.chunk_bits

    def parts(self, width: int) -> int:
        if width % self.chunk_bits:
            raise ContractError(f"ring width {width} not divisible by chunk width")
        return width // self.chunk_bits


DEFAULT_OT = OtParams()


@dataclass
class BitShare:
    """XOR-shared bit tensor (values 0/1, uint8)."""

    party: Party
    bits: np.ndarray

    def __xor__(self, other: "BitShare") -> "BitShare":
        if self.party != other.party:
            raise ContractError("bit shares belong to different parties")
        return BitShare(self.party, self.bits ^ other.bits)


def rec_bits(b0: BitShare, b1: BitShare) -> np.ndarray:
    if b0.party == b1.party:
        raise ContractError("rec needs shares from both parties")
    return b0.bits ^ b1.bits


def chunk_decompose(values: np.ndarray, width: int, chunk_bits: int = 2) -> np.ndarray:
    """(N,) unsigned values -> (N, U) chunks, most significant first."""
    u = width // chunk_bits
    shifts = np.arange(u - 1, -1, -1, dtype=np.uint64) * np.uint64(chunk_bits)
    mask = np.uint64((1 << chunk_bits) - 1)
    return ((values[:, None] >> shifts[None, :]) & mask).astype(np.uint8)


def chunk_reassemble(chunks: np.ndarray, chunk_bits: int = 2) -> np.ndarray:
    u = chunks.shape[1]
    shifts = np.arange(u - 1, -1, -1, dtype=np.uint64) * np.uint64(chunk_bits)
    return np.sum(chunks.astype(np.uint64) << shifts[None, :], axis=1, dtype=np.uint64)


def powmod(base: np.ndarray, exp, m: int) -> np.ndarray:
    """Vectorized modular exponentiation; m must stay below 2^31."""
    base = np.asarray(base, dtype=np.uint64) % np.uint64(m)
    if np.isscalar(exp) or np.asarray(exp).ndim == 0:
        exp = np.full(base.shape, int(exp), dtype=np.uint64)
    else:
        exp = np.asarray(exp, dtype=np.uint64)
    result = np.ones(base.shape, dtype=np.uint64)
    e = exp.copy()
    b = base.copy()
    mm = np.uint64(m)
    for _ in range(64):
        if not np.any(e):
            break
        odd = (e & np.uint64(1)).astype(bool)
        result[odd] = (result[odd] * b[odd]) % mm
        b = (b * b) % mm
        e >>= np.uint64(1)
    return result


def _pads(keys: np.ndarray, n_idx: np.ndarray, u_idx: np.ndarray, j_idx: np.ndarray) -> np.ndarray:
    """Hash-derived 32-bit XOR pads, one per (element, chunk, candidate)."""
    out = np.empty(keys.shape, dtype=np.uint32)
    flat_k = keys.ravel()
    flat = (n_idx.ravel(), u_idx.ravel(), j_idx.ravel())
    pack = struct.pack
    sha = hashlib.sha256
    dst = out.ravel()
    for i in range(flat_k.size):
        digest = sha(pack("<QIII", int(flat_k[i]), int(flat[0][i]), int(flat[1][i]), int(flat[2][i]))).digest()
        dst[i] = int.from_bytes(digest[:ENTRY_BYTES], "little")
    return out


def _pack_bits(*arrays: np.ndarray) -> bytes:
    return np.packbits(np.concatenate([a.ravel().astype(np.uint8) for a in arrays])).tobytes()


def _unpack_bits(buf: bytes, shapes: list[tuple]) -> list[np.ndarray]:
    total = sum(int(np.prod(s)) for s in shapes)
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=total)
    out, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(bits[off : off + n].reshape(s))
        off += n
    return out


# -- 1-of-4 OT over chunk tables ----------------------------------------


def ot_send(sess: Session, payloads: np.ndarray, params: OtParams = DEFAULT_OT) -> None:
    """Sender side: payloads (N, U, 4) uint32, one table per chunk.

    Performs steps 1 and 3 of the flow (setup broadcast + encrypted
    table); the receiver ends up with the payload at its chunk index.
    """
    m, g = params.prime, params.generator
    n, u, l = payloads.shape
    if l != params.n_choices:
        raise ContractError("payload table must have one entry per candidate")
    rd0 = int(sess.rng.integers(1, m - 1))
    s_elem = pow(g, rd0, m)
    sess.ch.send(MsgType.CMP_STEP1, struct.pack("<I", s_elem))

    r_buf = sess.ch.recv(MsgType.CMP_STEP2)
    r = np.frombuffer(r_buf, dtype="<u4").astype(np.uint64).reshape(n, u)
    if np.any(r < 1) or np.any(r >= m):
        raise ProtocolAbort("receiver choice element outside the group")

    s_inv = pow(s_elem, -1, m)
    n_idx, u_idx, j_idx = np.meshgrid(np.arange(n), np.arange(u), np.arange(l), indexing="ij")
    # per-candidate key base: R * S^-j, then ^rd0
    s_inv_pow = np.array([pow(s_inv, j, m) for j in range(l)], dtype=np.uint64)
    bases = (r[:, :, None] * s_inv_pow[None, None, :]) % np.uint64(m)
    keys = powmod(bases, rd0, m)
    table = payloads.astype(np.uint32) ^ _pads(keys, n_idx, u_idx, j_idx)
    sess.ch.send(MsgType.CMP_STEP3, table.astype("<u4").tobytes())


def ot_receive(sess: Session, choices: np.ndarray, params: OtParams = DEFAULT_OT, debug: bool = False):
    """Receiver side: choices (N, U) in [0,4); returns chosen uint32 payloads."""
    m, g = params.prime, params.generator
    n, u = choices.shape
    s_buf = sess.ch.recv(MsgType.CMP_STEP1)
    (s_elem,) = struct.unpack("<I", s_buf)
    if not 1 < s_elem < m:
        raise ProtocolAbort("sender setup element outside the group")

    rd1 = sess.rng.integers(1, m - 1, size=(n, u), dtype=np.uint64)
    s_pow = np.array([pow(s_elem, j, m) for j in range(params.n_choices)], dtype=np.uint64)
    r = (powmod(np.full((n, u), g, dtype=np.uint64), rd1, m) * s_pow[choices]) % np.uint64(m)
    sess.ch.send(MsgType.CMP_STEP2, r.astype("<u4").tobytes())

    keys = powmod(np.full((n, u), s_elem, dtype=np.uint64), rd1, m)
    table_buf = sess.ch.recv(MsgType.CMP_STEP3)
    table = np.frombuffer(table_buf, dtype="<u4").reshape(n, u, params.n_choices)
    n_idx, u_idx = np.meshgrid(np.arange(n), np.arange(u), indexing="ij")
    pads = _pads(keys, n_idx, u_idx, choices.astype(np.uint64))
    chosen = table[n_idx, u_idx, choices] ^ pads
    if debug:
        return chosen, keys, table
    return chosen


# -- secure AND and the chunk-combination tree ---------------------------


def bit_and(sess: Session, x: np.ndarray, y: np.ndarray, triple: cr.CorrelatedHalf) -> np.ndarray:
    """Batched Z2 Beaver AND on XOR-shared bit arrays; one exchange."""
    triple.expect(cr.KIND_BIT_TRIPLE).consume()
    a = triple.tensors["a"].data.astype(np.uint8)
    b = triple.tensors["b"].data.astype(np.uint8)
    z = triple.tensors["z"].data.astype(np.uint8)
    if a.shape != x.shape or b.shape != y.shape:
        raise ContractError("bit triple shape mismatch")
    d, e = x ^ a, y ^ b
    peer = sess.ch.exchange(MsgType.CMP_COMBINE, _pack_bits(d, e))
    pd, pe = _unpack_bits(peer, [d.shape, e.shape])
    dd, ee = d ^ pd, e ^ pe
    out = z ^ (dd & b) ^ (ee & a)
    if sess.party == Party.S0:
        out ^= dd & ee
    return out


def combine_chunks(sess: Session, gt: np.ndarray, eq: np.ndarray) -> np.ndarray:
    """Fold per-chunk (gt, eq) shares, MSB first, into one GT bit share.

    Per level, adjacent chunk pairs merge: gt' = gt_hi XOR (eq_hi AND
    gt_lo), eq' = eq_hi AND eq_lo; both ANDs ride one exchange.
    """
    while gt.shape[1] > 1:
        gt_hi, gt_lo = gt[:, 0::2], gt[:, 1::2]
        eq_hi, eq_lo = eq[:, 0::2], eq[:, 1::2]
        x = np.stack([eq_hi, eq_hi])
        y = np.stack([gt_lo, eq_lo])
        triple = sess.store.next(cr.KIND_BIT_TRIPLE)
        res = bit_and(sess, x, y, triple)
        gt = gt_hi ^ res[0]
        eq = res[1]
    return gt[:, 0]


def issue_compare(dl: cr.Dealer, n: int, width: int, params: OtParams = DEFAULT_OT):
    """Dealer items one compare_2pc batch consumes, in order."""
    u = params.parts(width)
    out0, out1 = [], []
    while u > 1:
        pairs = u // 2
        h0, h1 = dl.bit_triples((2, n, pairs))
        out0.append(h0)
        out1.append(h1)
        u = pairs
    return out0, out1


def compare_2pc(
    sess: Session,
    value: RingTensor,
    m0_holder: Party = Party.S0,
    params: OtParams = DEFAULT_OT,
) -> BitShare:
    """Strict unsigned comparison M0 > M1 of two privately held tensors.

    The M0 holder supplies `value` as M0 and plays sender; the other
    party's `value` is M1.  Returns an XOR share of the result bit per
    element; equality yields 0.
    """
    width = value.fp.total_bits
    u = params.parts(width)
    flat = value.data.reshape(-1)
    n = flat.size
    chunks = chunk_decompose(flat, width, params.chunk_bits)

    if sess.party == m0_holder:
        m_gt = sess.rng.integers(0, 2, size=(n, u), dtype=np.uint8)
        m_eq = sess.rng.integers(0, 2, size=(n, u), dtype=np.uint8)
        cand = np.arange(params.n_choices, dtype=np.uint8)
        gt_tab = (chunks[:, :, None] > cand[None, None, :]).astype(np.uint32)
        eq_tab = (chunks[:, :, None] == cand[None, None, :]).astype(np.uint32)
        payloads = (gt_tab ^ m_gt[:, :, None]) | ((eq_tab ^ m_eq[:, :, None]) << 1)
        ot_send(sess, payloads, params)
        v_buf = sess.ch.recv(MsgType.CMP_STEP4)
        v_gt, v_eq = _unpack_bits(v_buf, [(n, u), (n, u)])
        gt_s = m_gt ^ v_gt
        eq_s = m_eq ^ v_eq
    else:
        chosen = ot_receive(sess, chunks, params)
        g_bits = (chosen & 1).astype(np.uint8)
        e_bits = ((chosen >> 1) & 1).astype(np.uint8)
        s_gt = sess.rng.integers(0, 2, size=(n, u), dtype=np.uint8)
        s_eq = sess.rng.integers(0, 2, size=(n, u), dtype=np.uint8)
        sess.ch.send(MsgType.CMP_STEP4, _pack_bits(g_bits ^ s_gt, e_bits ^ s_eq))
        gt_s, eq_s = s_gt, s_eq

    out = combine_chunks(sess, gt_s, eq_s)
    return BitShare(sess.party, out.reshape(value.shape))


# -- sign extraction and share-domain conversion -------------------------


def issue_drelu(dl: cr.Dealer, n: int, width: int, params: OtParams = DEFAULT_OT):
    return issue_compare(dl, n, width, params)


def drelu_sign(sess: Session, x: ShareTensor, params: OtParams = DEFAULT_OT) -> BitShare:
    """XOR-shared indicator of (x > 0) in the signed interpretation.

    Uses msb(x-1): with t = x - 1 and shares a = t_S0, b = -t_S1, the
    sign bit of t is msb(a) XOR msb(b) XOR [a' < b'] on the low w-1
    bits, which is one millionaires run with S1 as M0 holder.  Exact
    within the headroom guard |x| < 2^(w-2).
    """
    w = x.fp.total_bits
    t = x.add_public(-1)
    if sess.party == Party.S0:
        mine = t.value.data
    else:
        mine = (-t.value).data
    msb = (mine >> np.uint64(w - 1)).astype(np.uint8)
    low = RingTensor(mine & np.uint64((1 << (w - 1)) - 1), x.fp)
    gt = compare_2pc(sess, low, m0_holder=Party.S1, params=params)
    bits = gt.bits ^ msb
    if sess.party == Party.S0:
        bits = bits ^ np.uint8(1)  # drelu = NOT sign
    return BitShare(sess.party, bits)


def issue_bit_to_arith(dl: cr.Dealer, shape):
    return dl.mul_triple(shape, shape, cr.KIND_MUL_ELEM)


def bit_to_arith(sess: Session, b: BitShare, triple: cr.CorrelatedHalf) -> ShareTensor:
    """XOR bit share -> arithmetic 0/1 share: b0 + b1 - 2*b0*b1."""
    mine = RingTensor(b.bits.astype(np.uint64), sess.fp)
    zero = RingTensor.zeros(b.bits.shape, sess.fp)
    x = sess.share(mine if sess.party == Party.S0 else zero)
    y = sess.share(zero if sess.party == Party.S0 else mine)
    prod = mul_2pc(sess, x, y, triple)
    return sess.share(mine) + prod.scale_by(-2)
