"""OT-based comparison: group arithmetic, 1-of-4 transfer, chunk
combination, sign extraction and bit conversion."""

import struct

import numpy as np
import pytest

from conftest import spmd
from secnn.compare import (
    BitShare,
    OtParams,
    bit_and,
    bit_to_arith,
    chunk_decompose,
    chunk_reassemble,
    compare_2pc,
    drelu_sign,
    issue_compare,
    ot_receive,
    ot_send,
    powmod,
    rec_bits,
)
from secnn.dealer import KIND_BIT_TRIPLE, KIND_MUL_ELEM, Dealer
from secnn.ring import ContractError, FixedPointConfig, RingTensor
from secnn.sharing import Party, rec, shr
from secnn.transport import OT_FLOW_TYPES, MsgType, ProtocolAbort

FP32 = FixedPointConfig(32, 12)
FP8 = FixedPointConfig(8, 0)
FP4 = FixedPointConfig(4, 0)

SMALL = OtParams(prime=23, generator=5)


class TestGroupMath:
    def test_hand_vector(self):
        # 5^6 mod 23 == 8
        assert pow(5, 6, 23) == 8
        assert int(powmod(np.array([5]), 6, 23)[0]) == 8

    def test_powmod_matches_builtin(self):
        rng = np.random.default_rng(0)
        m = (1 << 31) - 1
        bases = rng.integers(1, m, size=50, dtype=np.uint64)
        exps = rng.integers(0, m, size=50, dtype=np.uint64)
        got = powmod(bases, exps, m)
        want = [pow(int(b), int(e), m) for b, e in zip(bases, exps)]
        assert [int(v) for v in got] == want

    def test_params_validation(self):
        with pytest.raises(ContractError):
            OtParams(prime=1 << 33, generator=7)
        with pytest.raises(ContractError):
            OtParams(prime=23, generator=1)
        with pytest.raises(ContractError):
            OtParams(prime=23, generator=5, chunk_bits=3)

    def test_chunk_roundtrip(self):
        rng = np.random.default_rng(1)
        vals = rng.integers(0, 1 << 32, size=100, dtype=np.uint64)
        chunks = chunk_decompose(vals, 32)
        assert chunks.shape == (100, 16)
        assert np.array_equal(chunk_reassemble(chunks), vals)

    def test_chunks_msb_first(self):
        chunks = chunk_decompose(np.array([0b11100100], dtype=np.uint64), 8)
        assert list(chunks[0]) == [3, 2, 1, 0]


class TestObliviousTransfer:
    def _transfer(self, payloads, choices, params):
        return spmd(
            FP32,
            lambda s: ot_send(s, payloads, params),
            lambda s: ot_receive(s, choices, params, debug=True),
        )

    def test_chosen_payload_recovered(self):
        rng = np.random.default_rng(2)
        payloads = rng.integers(0, 1 << 32, size=(5, 4, 4), dtype=np.uint64).astype(np.uint32)
        choices = rng.integers(0, 4, size=(5, 4), dtype=np.uint64).astype(np.intp)
        _, (chosen, _, _), _, _ = self._transfer(payloads, choices, SMALL)
        n_idx, u_idx = np.meshgrid(np.arange(5), np.arange(4), indexing="ij")
        assert np.array_equal(chosen, payloads[n_idx, u_idx, choices])

    def test_decrypt_all_oracle(self):
        # the receiver's key opens exactly its chosen index, garbage elsewhere
        from secnn.compare import _pads

        rng = np.random.default_rng(3)
        payloads = rng.integers(0, 1 << 32, size=(3, 2, 4), dtype=np.uint64).astype(np.uint32)
        choices = rng.integers(0, 4, size=(3, 2), dtype=np.uint64).astype(np.intp)
        _, (chosen, keys, table), _, _ = self._transfer(payloads, choices, SMALL)
        for n in range(3):
            for u in range(2):
                for jc in range(4):
                    pad = _pads(
                        np.array([[keys[n, u]]]),
                        np.array([[n]]),
                        np.array([[u]]),
                        np.array([[jc]]),
                    )[0, 0]
                    plain = int(table[n, u, jc]) ^ int(pad)
                    if jc == choices[n, u]:
                        assert plain == payloads[n, u, jc]
                    else:
                        assert plain != payloads[n, u, jc]

    def test_payload_is_own_index(self):
        # payload(u, j) = j: the receiver recovers its own chunk value
        payloads = np.tile(np.arange(4, dtype=np.uint32), (2, 3, 1))
        choices = np.array([[0, 1, 2], [3, 0, 2]], dtype=np.intp)
        _, (chosen, _, _), _, _ = self._transfer(payloads, choices, SMALL)
        assert np.array_equal(chosen, choices.astype(np.uint32))

    def test_tampered_choice_element_aborts(self):
        def bad_receiver(sess):
            sess.ch.recv(MsgType.CMP_STEP1)
            sess.ch.send(MsgType.CMP_STEP2, np.zeros(4, dtype="<u4").tobytes())
            sess.ch.recv(MsgType.CMP_STEP3)

        payloads = np.zeros((2, 2, 4), dtype=np.uint32)
        with pytest.raises(ProtocolAbort, match="group"):
            spmd(FP32, lambda s: ot_send(s, payloads, SMALL), bad_receiver)

    def test_degenerate_setup_rejected(self):
        # a sender exponent of zero would broadcast S = 1
        def bad_sender(sess):
            sess.ch.send(MsgType.CMP_STEP1, struct.pack("<I", 1))

        def receiver(sess):
            return ot_receive(sess, np.zeros((1, 2), dtype=np.intp), SMALL)

        with pytest.raises(ProtocolAbort, match="group"):
            spmd(FP32, bad_sender, receiver)


class TestSecureAnd:
    def test_all_input_patterns(self):
        dl = Dealer(0, FP32)
        # every (x, y) in {0,1}^2 under every XOR sharing split
        xs = np.array([0, 0, 1, 1, 0, 0, 1, 1], dtype=np.uint8)
        ys = np.array([0, 1, 0, 1, 0, 1, 0, 1], dtype=np.uint8)
        x0 = np.array([0, 0, 1, 0, 0, 1, 1, 1], dtype=np.uint8)  # varied splits
        y0 = np.array([0, 1, 0, 1, 0, 0, 1, 0], dtype=np.uint8)
        x1, y1 = xs ^ x0, ys ^ y0
        h0, h1 = dl.bit_triples((8,))
        r0, r1, _, _ = spmd(
            FP32,
            lambda s: bit_and(s, x0, y0, h0),
            lambda s: bit_and(s, x1, y1, h1),
        )
        assert np.array_equal(r0 ^ r1, xs & ys)


def _compare_batch(m0_vals, m1_vals, fp, params, seed=0):
    """Run one comparison batch; returns reconstructed GT bits and channels."""
    t0 = RingTensor(np.asarray(m0_vals, dtype=np.uint64), fp)
    t1 = RingTensor(np.asarray(m1_vals, dtype=np.uint64), fp)
    dl = Dealer(seed + 50, fp)
    i0, i1 = issue_compare(dl, t0.data.size, fp.total_bits, params)
    b0, b1, ch0, ch1 = spmd(
        fp,
        lambda s: compare_2pc(s, t0, Party.S0, params),
        lambda s: compare_2pc(s, t1, Party.S0, params),
        items0=i0,
        items1=i1,
        seed=seed,
    )
    return rec_bits(b0, b1), ch0, ch1


class TestCompare:
    def test_4bit_hand_cases(self):
        got, _, _ = _compare_batch([5, 3, 7, 0, 15], [3, 5, 7, 1, 0], FP4, SMALL)
        assert list(got) == [1, 0, 0, 0, 1]

    def test_equal_is_zero(self):
        got, _, _ = _compare_batch([9], [9], FP4, SMALL)
        assert got[0] == 0

    def test_randomized_8bit(self):
        rng = np.random.default_rng(4)
        m0 = rng.integers(0, 256, size=2000, dtype=np.uint64)
        m1 = rng.integers(0, 256, size=2000, dtype=np.uint64)
        got, _, _ = _compare_batch(m0, m1, FP8, SMALL)
        assert np.array_equal(got, (m0 > m1).astype(np.uint8))

    def test_flow_is_four_messages(self):
        _, ch0, ch1 = _compare_batch([1, 2, 3], [3, 2, 1], FP8, SMALL)
        flow = [int(t) for t in OT_FLOW_TYPES]
        n_flow = sum(
            v for ch in (ch0, ch1) for k, v in ch.counters.msgs_by_type.items() if k in flow
        )
        assert n_flow == 4

    def test_step3_table_size(self):
        n = 7
        _, ch0, ch1 = _compare_batch(np.arange(n), np.arange(n)[::-1].copy(), FP32, SMALL)
        by_type = {**ch0.counters.bytes_by_type}
        for k, v in ch1.counters.bytes_by_type.items():
            by_type[k] = by_type.get(k, 0) + v
        # 4 candidates x 16 chunks x 4 bytes per element, plus one 8-byte header
        assert by_type[int(MsgType.CMP_STEP3)] == n * 4 * 16 * 4 + 8

    def test_production_group_32bit(self):
        rng = np.random.default_rng(5)
        m0 = rng.integers(0, 1 << 32, size=50, dtype=np.uint64)
        m1 = rng.integers(0, 1 << 32, size=50, dtype=np.uint64)
        got, _, _ = _compare_batch(m0, m1, FP32, OtParams())
        assert np.array_equal(got, (m0 > m1).astype(np.uint8))

    def test_sender_transcript_length_choice_invariant(self):
        # byte counts on the sender side must not depend on receiver choices
        _, ch0a, ch1a = _compare_batch([0, 0], [0, 0], FP8, SMALL, seed=1)
        _, ch0b, ch1b = _compare_batch([0, 0], [255, 129], FP8, SMALL, seed=1)
        assert ch0a.counters.bytes_sent == ch0b.counters.bytes_sent
        assert ch1a.counters.bytes_sent == ch1b.counters.bytes_sent


def _drelu_batch(vals, fp, params, seed=0, sharings=1):
    dl = Dealer(seed + 90, fp)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(sharings):
        x = RingTensor.from_ints(vals, fp)
        x0, x1 = shr(x, rng)
        i0, i1 = issue_compare(dl, x.data.size, fp.total_bits, params)
        b0, b1, _, _ = spmd(
            fp,
            lambda s: drelu_sign(s, x0, params),
            lambda s: drelu_sign(s, x1, params),
            items0=i0,
            items1=i1,
            seed=seed,
        )
        out.append(rec_bits(b0, b1))
    return out


class TestDreluSign:
    def test_sign_cases(self):
        (got,) = _drelu_batch([1, 0, -1], FP32, OtParams())
        assert list(got) == [1, 0, 0]

    def test_exhaustive_8bit_headroom(self):
        vals = np.arange(-64, 65)
        want = (vals > 0).astype(np.uint8)
        for got in _drelu_batch(vals, FP8, SMALL, sharings=5):
            assert np.array_equal(got, want)

    def test_boundary(self):
        (got,) = _drelu_batch([64, -64], FP8, SMALL)
        assert list(got) == [1, 0]

    def test_fractional_values(self):
        x = RingTensor.encode([0.25, -0.25, 3.5, -3.5], FP32)
        (got,) = _drelu_batch(x.signed(), FP32, OtParams())
        assert list(got) == [1, 0, 1, 0]


class TestBitToArith:
    @pytest.mark.parametrize("b0,b1", [(0, 0), (0, 1), (1, 0), (1, 1)])
    def test_all_share_patterns(self, b0, b1):
        dl = Dealer(6, FP32)
        h0, h1 = dl.mul_triple((1,), (1,), KIND_MUL_ELEM)
        s0 = BitShare(Party.S0, np.array([b0], dtype=np.uint8))
        s1 = BitShare(Party.S1, np.array([b1], dtype=np.uint8))
        r0, r1, _, _ = spmd(
            FP32,
            lambda s: bit_to_arith(s, s0, h0),
            lambda s: bit_to_arith(s, s1, h1),
        )
        assert rec(r0, r1).signed()[0] == (b0 ^ b1)
