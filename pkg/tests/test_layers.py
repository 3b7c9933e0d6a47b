"""Secure layer operators against plaintext fixed-point oracles, plus
structural communication invariants."""

import numpy as np
import pytest

from conftest import spmd
from secnn.dealer import Dealer
from secnn.layers import (
    X2ActParams,
    avgpool2pc,
    conv2pc,
    dense2pc,
    fuse_batchnorm,
    issue_avgpool,
    issue_conv,
    issue_dense,
    issue_maxpool,
    issue_relu,
    issue_x2act,
    maxpool2pc,
    ref_avgpool,
    ref_conv,
    ref_dense,
    ref_maxpool,
    ref_relu,
    ref_x2act,
    relu2pc,
    x2act2pc,
)
from secnn.ring import ContractError, FixedPointConfig, RingTensor
from secnn.sharing import rec, shr
from secnn.transport import OT_FLOW_TYPES, MsgType

FP = FixedPointConfig(32, 12)


def _run_layer(issue_args, online, *tensors, seed=0):
    """Share tensors, issue dealer items, run the layer on both parties."""
    dl = Dealer(seed + 1000, FP)
    i0, i1 = issue_args(dl)
    rng = np.random.default_rng(seed)
    shares = [shr(t, rng) for t in tensors]
    r0, r1, ch0, ch1 = spmd(
        FP,
        lambda s: online(s, *[p[0] for p in shares]),
        lambda s: online(s, *[p[1] for p in shares]),
        items0=i0,
        items1=i1,
        seed=seed,
    )
    return rec(r0, r1), ch0, ch1


def _ot_flow_bytes(ch0, ch1):
    flow = [int(t) for t in OT_FLOW_TYPES]
    total = 0
    for ch in (ch0, ch1):
        total += sum(v for k, v in ch.counters.bytes_by_type.items() if k in flow)
    return total


class TestConv:
    def test_identity_1x1(self):
        x = RingTensor.encode(np.arange(-4, 5).reshape(1, 1, 3, 3) / 4, FP)
        w = RingTensor.encode(np.ones((1, 1, 1, 1)), FP)
        out, ch0, _ = _run_layer(
            lambda dl: issue_conv(dl, (1, 1, 3, 3), (1, 1, 1, 1)),
            lambda s, xs, ws: conv2pc(s, xs, ws),
            x,
            w,
        )
        assert out == x
        assert ch0.counters.rounds == 2  # one multiply open, one rescale open

    def test_all_ones_2x2(self):
        x = RingTensor.encode(np.ones((1, 1, 2, 2)), FP)
        w = RingTensor.encode(np.ones((1, 1, 2, 2)), FP)
        out, _, _ = _run_layer(
            lambda dl: issue_conv(dl, (1, 1, 2, 2), (1, 1, 2, 2)),
            lambda s, xs, ws: conv2pc(s, xs, ws),
            x,
            w,
        )
        assert out.decode().reshape(()) == 4.0

    def test_random_vs_oracle(self):
        rng = np.random.default_rng(10)
        x = RingTensor.encode(rng.uniform(-1, 1, size=(2, 3, 8, 8)), FP)
        w = RingTensor.encode(rng.uniform(-1, 1, size=(4, 3, 3, 3)), FP)
        b = RingTensor.encode(rng.uniform(-1, 1, size=4), FP)
        out, _, _ = _run_layer(
            lambda dl: issue_conv(dl, (2, 3, 8, 8), (4, 3, 3, 3), 1, 1),
            lambda s, xs, ws, bs: conv2pc(s, xs, ws, bs, 1, 1),
            x,
            w,
            b,
        )
        assert out == ref_conv(x, w, b, 1, 1)

    def test_channel_mismatch(self):
        x = RingTensor.zeros((1, 2, 3, 3), FP)
        w = RingTensor.zeros((1, 3, 1, 1), FP)
        with pytest.raises(ContractError):
            _run_layer(
                lambda dl: issue_conv(dl, (1, 2, 3, 3), (1, 2, 1, 1)),
                lambda s, xs, ws: conv2pc(s, xs, ws),
                x,
                w,
            )


class TestDense:
    def test_random_vs_oracle(self):
        rng = np.random.default_rng(11)
        x = RingTensor.encode(rng.uniform(-1, 1, size=(4, 6)), FP)
        w = RingTensor.encode(rng.uniform(-1, 1, size=(6, 3)), FP)
        b = RingTensor.encode(rng.uniform(-1, 1, size=3), FP)
        out, ch0, _ = _run_layer(
            lambda dl: issue_dense(dl, (4, 6), (6, 3)),
            lambda s, xs, ws, bs: dense2pc(s, xs, ws, bs),
            x,
            w,
            b,
        )
        assert out == ref_dense(x, w, b)
        assert ch0.counters.rounds == 2


class TestRelu:
    def test_sign_cases(self):
        x = RingTensor.encode([1.0, -1.0, 0.0], FP)
        out, _, _ = _run_layer(
            lambda dl: issue_relu(dl, (3,)),
            lambda s, xs: relu2pc(s, xs),
            x,
        )
        assert list(out.decode()) == [1.0, 0.0, 0.0]

    def test_random_vs_oracle(self):
        rng = np.random.default_rng(12)
        x = RingTensor.encode(rng.uniform(-8, 8, size=(64,)), FP)
        out, ch0, ch1 = _run_layer(
            lambda dl: issue_relu(dl, (64,)),
            lambda s, xs: relu2pc(s, xs),
            x,
        )
        assert out == ref_relu(x)
        # exactly one comparison batch: 4 flow messages total
        flow = [int(t) for t in OT_FLOW_TYPES]
        n_flow = sum(
            v for ch in (ch0, ch1) for k, v in ch.counters.msgs_by_type.items() if k in flow
        )
        assert n_flow == 4

    def test_batching_does_not_add_messages(self):
        def messages(n, seed):
            x = RingTensor.encode(np.linspace(-2, 2, n), FP)
            _, ch0, ch1 = _run_layer(
                lambda dl: issue_relu(dl, (n,)),
                lambda s, xs: relu2pc(s, xs),
                x,
                seed=seed,
            )
            return ch0.counters.messages_sent + ch1.counters.messages_sent

        assert messages(1, 0) == messages(64, 1)


class TestMaxPool:
    def test_hand_window(self):
        x = RingTensor.encode(np.array([[1.0, 2.0], [-3.0, 0.5]]).reshape(1, 1, 2, 2), FP)
        out, _, _ = _run_layer(
            lambda dl: issue_maxpool(dl, (1, 1, 2, 2), 2),
            lambda s, xs: maxpool2pc(s, xs, 2),
            x,
        )
        assert out.decode().reshape(()) == 2.0

    def test_all_equal_window(self):
        x = RingTensor.encode(np.full((1, 1, 2, 2), 0.75), FP)
        out, _, _ = _run_layer(
            lambda dl: issue_maxpool(dl, (1, 1, 2, 2), 2),
            lambda s, xs: maxpool2pc(s, xs, 2),
            x,
        )
        assert out.decode().reshape(()) == 0.75

    def test_random_vs_oracle(self):
        rng = np.random.default_rng(13)
        x = RingTensor.encode(rng.uniform(-4, 4, size=(2, 3, 8, 8)), FP)
        out, ch0, ch1 = _run_layer(
            lambda dl: issue_maxpool(dl, (2, 3, 8, 8), 2),
            lambda s, xs: maxpool2pc(s, xs, 2),
            x,
        )
        assert out == ref_maxpool(x, 2)

    def test_three_sequential_stages_for_2x2(self):
        x = RingTensor.encode(np.zeros((1, 1, 2, 2)), FP)
        _, ch0, ch1 = _run_layer(
            lambda dl: issue_maxpool(dl, (1, 1, 2, 2), 2),
            lambda s, xs: maxpool2pc(s, xs, 2),
            x,
        )
        step1 = sum(
            ch.counters.msgs_by_type.get(int(MsgType.CMP_STEP1), 0) for ch in (ch0, ch1)
        )
        assert step1 == 3  # one comparison stage per remaining window element


class TestAvgPool:
    def test_constant(self):
        x = RingTensor.encode(np.full((1, 1, 4, 4), 1.25), FP)
        out, _, _ = _run_layer(
            lambda dl: issue_avgpool(dl, (1, 1, 4, 4), 2),
            lambda s, xs: avgpool2pc(s, xs, 2),
            x,
        )
        assert np.all(np.abs(out.decode() - 1.25) <= 2**-12)

    def test_hand_window(self):
        x = RingTensor.encode(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2), FP)
        out, _, _ = _run_layer(
            lambda dl: issue_avgpool(dl, (1, 1, 2, 2), 2),
            lambda s, xs: avgpool2pc(s, xs, 2),
            x,
        )
        assert abs(out.decode().reshape(()) - 2.5) <= 2**-12

    def test_zero_ot_bytes_and_one_round(self):
        x = RingTensor.encode(np.zeros((1, 2, 4, 4)), FP)
        out, ch0, ch1 = _run_layer(
            lambda dl: issue_avgpool(dl, (1, 2, 4, 4), 2),
            lambda s, xs: avgpool2pc(s, xs, 2),
            x,
        )
        assert _ot_flow_bytes(ch0, ch1) == 0
        assert ch0.counters.rounds == 1

    def test_matches_oracle(self):
        rng = np.random.default_rng(14)
        x = RingTensor.encode(rng.uniform(-2, 2, size=(2, 2, 6, 6)), FP)
        out, _, _ = _run_layer(
            lambda dl: issue_avgpool(dl, (2, 2, 6, 6), 3),
            lambda s, xs: avgpool2pc(s, xs, 3),
            x,
        )
        assert out == ref_avgpool(x, 3)


class TestX2Act:
    def _run(self, x, params, seed=0):
        out, ch0, ch1 = _run_layer(
            lambda dl: issue_x2act(dl, x.shape, params),
            lambda s, xs: x2act2pc(s, xs, params),
            x,
            seed=seed,
        )
        return out, ch0, ch1

    def test_identity_initialization_exact(self):
        x = RingTensor.encode([0.5, -1.25, 3.0, 0.0], FP)
        out, _, _ = self._run(x, X2ActParams.identity(n_x=4))
        assert out == x

    def test_pure_square(self):
        # w1 with c=1, N_x=1, w2=0, b=0: delta(2.0) = 4.0
        x = RingTensor.encode([2.0], FP)
        out, _, _ = self._run(x, X2ActParams(w1=1.0, w2=0.0, b=0.0, n_x=1))
        assert abs(out.decode()[0] - 4.0) <= 2 * 2**-12

    def test_random_vs_oracle_bitexact(self):
        rng = np.random.default_rng(15)
        x = RingTensor.encode(rng.uniform(-3, 3, size=(50,)), FP)
        params = X2ActParams(w1=0.8, w2=-0.4, b=0.2, n_x=50)
        seed = 3
        dl = Dealer(seed + 1000, FP)  # same dealer stream the runner uses
        i0, i1 = issue_x2act(dl, x.shape, params)
        v = ((i0[1].tensors["r"] + i1[1].tensors["r"]).data) >> np.uint64(FP.frac_bits)
        out, _, _ = self._run(x, params, seed=seed)
        assert out == ref_x2act(x, params, v)

    def test_within_two_ulp_of_real(self):
        rng = np.random.default_rng(16)
        vals = rng.uniform(-3, 3, size=200)
        x = RingTensor.encode(vals, FP)
        params = X2ActParams(w1=0.6, w2=0.3, b=-0.1, n_x=200)
        out, _, _ = self._run(x, params)
        xr = x.decode()
        want = params.w1 / np.sqrt(200) * xr * xr + params.w2 * xr + params.b
        assert np.all(np.abs(out.decode() - want) <= 3 * 2**-12)

    def test_exactly_two_rounds_no_ot(self):
        x = RingTensor.encode(np.linspace(-1, 1, 32), FP)
        out, ch0, ch1 = self._run(x, X2ActParams(w1=0.5, w2=0.5, b=0.0, n_x=32))
        assert ch0.counters.rounds == 2
        assert _ot_flow_bytes(ch0, ch1) == 0


class TestBatchNormFusion:
    def test_identity_unchanged(self):
        rng = np.random.default_rng(17)
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        fw, fb = fuse_batchnorm(w, b, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), eps=0.0)
        assert np.allclose(fw, w) and np.allclose(fb, b)

    def test_gamma_scales_weights(self):
        w = np.ones((2, 1, 1, 1))
        fw, _ = fuse_batchnorm(w, np.zeros(2), 2 * np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), eps=0.0)
        assert np.allclose(fw, 2 * w)

    def test_fold_matches_two_op_oracle(self):
        rng = np.random.default_rng(18)
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        gamma, beta = rng.normal(size=3), rng.normal(size=3)
        mean, var = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
        fw, fb = fuse_batchnorm(w, b, gamma, beta, mean, var, eps=1e-5)
        x = rng.normal(size=(1, 2, 5, 5))

        def conv(xx, ww, bb):
            out = np.zeros((1, 3, 3, 3))
            for oc in range(3):
                for i in range(3):
                    for j in range(3):
                        out[0, oc, i, j] = np.sum(xx[0, :, i : i + 3, j : j + 3] * ww[oc]) + bb[oc]
            return out

        plain = conv(x, w, b)
        bn = gamma[None, :, None, None] * (plain - mean[None, :, None, None]) / np.sqrt(
            var[None, :, None, None] + 1e-5
        ) + beta[None, :, None, None]
        fused = conv(x, fw, fb)
        assert np.allclose(fused, bn, rtol=1e-6, atol=1e-9)

    def test_zero_variance_rejected(self):
        with pytest.raises(ContractError):
            fuse_batchnorm(np.ones((1, 1, 1, 1)), np.zeros(1), np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1), eps=0.0)
