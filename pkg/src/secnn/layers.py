"""Secure layer operators composed from the protocol primitives.

Each operator comes in three aligned pieces that must consume dealer
material in the same order:

* ``issue_<op>``  - dealer side, returns the per-party correlated halves,
* ``<op>2pc``     - online SPMD protocol, pulls from the session store,
* ``ref_<op>``    - plaintext fixed-point oracle with the identical
  rounding schedule (same truncation points, same floor semantics).

Convolution and dense layers use one matmul-geometry Beaver triple over
im2col patches, so each costs two communication rounds regardless of
spatial size.  The square activation also stays at two rounds by folding
its public quadratic coefficient into a scaled truncation pair and
batching both rescales into one opening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dealer as cr
from .compare import bit_to_arith, drelu_sign, issue_compare
from .protocol import Session, mul_2pc, square_2pc, truncate_2pc, truncate_batch
from .ring import (
    ContractError,
    FixedPointConfig,
    RingTensor,
    conv_out_size,
    fp_encode,
    im2col,
)
from .sharing import ShareTensor


def _arith_shift(t: RingTensor, f: int) -> RingTensor:
    """Plaintext analogue of exact truncation: signed floor shift by f."""
    return RingTensor.from_ints(t.signed() >> np.int64(f), t.fp)


def _add_bias(value: RingTensor, bias: RingTensor, channel_axis: int, lshift: int) -> RingTensor:
    """Add a per-channel bias (shifted left to match the operand scale)."""
    shape = [1] * value.data.ndim
    shape[channel_axis] = bias.data.size
    shifted = bias.scale_by(1 << lshift).data.reshape(shape)
    return RingTensor(value.data + shifted, value.fp)


# -- convolution and dense ----------------------------------------------


def issue_conv(dl: cr.Dealer, x_shape, w_shape, stride: int = 1, pad: int = 0):
    n, ic, h, w = x_shape
    oc, ic2, kh, kw = w_shape
    oh, ow = conv_out_size(h, kh, stride, pad), conv_out_size(w, kw, stride, pad)
    rows = n * oh * ow
    t0, t1 = dl.mul_triple((rows, ic * kh * kw), (ic * kh * kw, oc), cr.KIND_MUL_MATMUL)
    p0, p1 = dl.trunc_pair((n, oc, oh, ow))
    return [t0, p0], [t1, p1]


def conv2pc(
    sess: Session,
    x: ShareTensor,
    weight: ShareTensor,
    bias: ShareTensor | None = None,
    stride: int = 1,
    pad: int = 0,
) -> ShareTensor:
    """Shared convolution with exact rescale; NCHW x OIHW, two rounds."""
    n, ic, h, w = x.shape
    oc, ic2, kh, kw = weight.shape
    if ic != ic2:
        raise ContractError(f"channel mismatch: input {ic}, weights {ic2}")
    oh, ow = conv_out_size(h, kh, stride, pad), conv_out_size(w, kw, stride, pad)
    patches = sess.share(im2col(x.value, kh, kw, stride, pad))
    wmat = sess.share(RingTensor(weight.data.reshape(oc, ic * kh * kw).T, weight.fp))
    triple = sess.store.next(cr.KIND_MUL_MATMUL)
    prod = mul_2pc(sess, patches, wmat, triple)  # (rows, oc), scale 2f
    out = RingTensor(prod.data.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2), x.fp)
    if bias is not None:
        out = _add_bias(out, bias.value, 1, x.fp.frac_bits)
    pair = sess.store.next(cr.KIND_TRUNC)
    return truncate_2pc(sess, sess.share(out), pair)


def ref_conv(x: RingTensor, weight: RingTensor, bias: RingTensor | None, stride: int = 1, pad: int = 0) -> RingTensor:
    from .ring import conv2d_plain

    out = conv2d_plain(x, weight, stride, pad)
    if bias is not None:
        out = _add_bias(out, bias, 1, x.fp.frac_bits)
    return _arith_shift(out, x.fp.frac_bits)


def issue_dense(dl: cr.Dealer, x_shape, w_shape):
    t0, t1 = dl.mul_triple(x_shape, w_shape, cr.KIND_MUL_MATMUL)
    p0, p1 = dl.trunc_pair((x_shape[0], w_shape[1]))
    return [t0, p0], [t1, p1]


def dense2pc(sess: Session, x: ShareTensor, weight: ShareTensor, bias: ShareTensor | None = None) -> ShareTensor:
    """Shared fully-connected layer: (N, D) x (D, M) plus per-unit bias."""
    triple = sess.store.next(cr.KIND_MUL_MATMUL)
    prod = mul_2pc(sess, x, weight, triple)
    out = prod.value
    if bias is not None:
        out = _add_bias(out, bias.value, 1, x.fp.frac_bits)
    pair = sess.store.next(cr.KIND_TRUNC)
    return truncate_2pc(sess, sess.share(out), pair)


def ref_dense(x: RingTensor, weight: RingTensor, bias: RingTensor | None) -> RingTensor:
    out = x.matmul(weight)
    if bias is not None:
        out = _add_bias(out, bias, 1, x.fp.frac_bits)
    return _arith_shift(out, x.fp.frac_bits)


# -- rectifier ----------------------------------------------------------


def issue_relu(dl: cr.Dealer, shape):
    n = int(np.prod(shape))
    out0, out1 = issue_compare(dl, n, dl.fp.total_bits)
    b2a0, b2a1 = dl.mul_triple(shape, shape, cr.KIND_MUL_ELEM)  # bit conversion
    g0, g1 = dl.mul_triple(shape, shape, cr.KIND_MUL_ELEM)  # gate multiply
    return out0 + [b2a0, g0], out1 + [b2a1, g1]


def relu2pc(sess: Session, x: ShareTensor) -> ShareTensor:
    """y = [x > 0] * x; one comparison batch plus two Beaver multiplies."""
    bit = drelu_sign(sess, x)
    gate = bit_to_arith(sess, bit, sess.store.next(cr.KIND_MUL_ELEM))
    return mul_2pc(sess, gate, x, sess.store.next(cr.KIND_MUL_ELEM))


def ref_relu(x: RingTensor) -> RingTensor:
    s = x.signed()
    return RingTensor.from_ints(np.where(s > 0, s, 0), x.fp)


# -- pooling ------------------------------------------------------------


def _pool_windows(x: RingTensor, k: int, stride: int) -> tuple[RingTensor, tuple]:
    """(N, C, H, W) -> row-major windows (N*C*OH*OW, k*k) and out shape."""
    n, c, h, w = x.shape
    oh, ow = conv_out_size(h, k, stride, 0), conv_out_size(w, k, stride, 0)
    flat = RingTensor(x.data.reshape(n * c, 1, h, w), x.fp)
    wins = im2col(flat, k, k, stride, 0)
    return wins, (n, c, oh, ow)


def issue_maxpool(dl: cr.Dealer, x_shape, k: int, stride: int | None = None):
    stride = k if stride is None else stride
    n, c, h, w = x_shape
    oh, ow = conv_out_size(h, k, stride, 0), conv_out_size(w, k, stride, 0)
    m = n * c * oh * ow
    out0, out1 = [], []
    for _ in range(k * k - 1):
        c0, c1 = issue_compare(dl, m, dl.fp.total_bits)
        b0, b1 = dl.mul_triple((m,), (m,), cr.KIND_MUL_ELEM)
        s0, s1 = dl.mul_triple((m,), (m,), cr.KIND_MUL_ELEM)
        out0 += c0 + [b0, s0]
        out1 += c1 + [b1, s1]
    return out0, out1


def maxpool2pc(sess: Session, x: ShareTensor, k: int, stride: int | None = None) -> ShareTensor:
    """Running-max scan over each window: k*k - 1 sequential stages.

    Stage j replaces the running max m by w_j when w_j > m, via
    m += b2a(w_j > m) * (w_j - m); the comparison operates on the
    difference, so the drelu headroom guard applies to value spreads.
    """
    stride = k if stride is None else stride
    wins, out_shape = _pool_windows(x.value, k, stride)
    cur = sess.share(RingTensor(wins.data[:, 0].copy(), x.fp))
    for j in range(1, k * k):
        cand = sess.share(RingTensor(wins.data[:, j].copy(), x.fp))
        diff = cand - cur
        bit = drelu_sign(sess, diff)
        gate = bit_to_arith(sess, bit, sess.store.next(cr.KIND_MUL_ELEM))
        step = mul_2pc(sess, gate, diff, sess.store.next(cr.KIND_MUL_ELEM))
        cur = cur + step
    return cur.reshape(out_shape)


def ref_maxpool(x: RingTensor, k: int, stride: int | None = None) -> RingTensor:
    stride = k if stride is None else stride
    wins, out_shape = _pool_windows(x, k, stride)
    signed = RingTensor(wins.data, x.fp).signed()
    return RingTensor.from_ints(signed.max(axis=1).reshape(out_shape), x.fp)


def issue_avgpool(dl: cr.Dealer, x_shape, k: int, stride: int | None = None):
    stride = k if stride is None else stride
    n, c, h, w = x_shape
    oh, ow = conv_out_size(h, k, stride, 0), conv_out_size(w, k, stride, 0)
    p0, p1 = dl.trunc_pair((n, c, oh, ow))
    return [p0], [p1]


def avgpool2pc(sess: Session, x: ShareTensor, k: int, stride: int | None = None) -> ShareTensor:
    """Local window sum times the public reciprocal, then one rescale."""
    stride = k if stride is None else stride
    wins, out_shape = _pool_windows(x.value, k, stride)
    total = RingTensor(wins.data.sum(axis=1, dtype=np.uint64).reshape(out_shape), x.fp)
    scaled = total.scale_by(fp_encode(1.0 / (k * k), x.fp))
    pair = sess.store.next(cr.KIND_TRUNC)
    return truncate_2pc(sess, sess.share(scaled), pair)


def ref_avgpool(x: RingTensor, k: int, stride: int | None = None) -> RingTensor:
    stride = k if stride is None else stride
    wins, out_shape = _pool_windows(x, k, stride)
    total = RingTensor(wins.data.sum(axis=1, dtype=np.uint64).reshape(out_shape), x.fp)
    return _arith_shift(total.scale_by(fp_encode(1.0 / (k * k), x.fp)), x.fp.frac_bits)


# -- square activation ---------------------------------------------------


@dataclass(frozen=True)
class X2ActParams:
    """Public coefficients of delta(x) = (c/sqrt(N_x)) w1 x^2 + w2 x + b."""

    w1: float
    w2: float
    b: float
    n_x: int
    c: float = 1.0

    def q_enc(self, fp: FixedPointConfig) -> int:
        """Effective quadratic coefficient, encoded (signed)."""
        return int(round(self.c * self.w1 / math.sqrt(self.n_x) * fp.scale))

    def w2_enc(self, fp: FixedPointConfig) -> int:
        return int(round(self.w2 * fp.scale))

    def b_enc(self, fp: FixedPointConfig) -> int:
        return int(round(self.b * fp.scale))

    @classmethod
    def identity(cls, n_x: int) -> "X2ActParams":
        """Pass-through initialization: w1=0, w2=1, b=0."""
        return cls(w1=0.0, w2=1.0, b=0.0, n_x=n_x)


def issue_x2act(dl: cr.Dealer, shape, params: X2ActParams):
    s0, s1 = dl.square_pair(shape)
    q0, q1 = dl.scaled_trunc_pair(shape, params.q_enc(dl.fp))
    p0, p1 = dl.trunc_pair(shape)
    return [s0, q0, p0], [s1, q1, p1]


def x2act2pc(sess: Session, x: ShareTensor, params: X2ActParams) -> ShareTensor:
    """Quadratic activation in exactly two communication rounds.

    Round 1 opens the square mask; round 2 batches two rescales: the
    x^2 term goes through a scaled truncation pair that folds in the
    public quadratic coefficient, and the affine term w2*x + b through
    a plain truncation.
    """
    fp = x.fp
    sq = square_2pc(sess, x, sess.store.next(cr.KIND_SQUARE))  # scale 2f
    affine = x.scale_by(params.w2_enc(fp)).add_public(params.b_enc(fp) << fp.frac_bits)
    q_pair = sess.store.next(cr.KIND_SCALED_TRUNC)
    p_pair = sess.store.next(cr.KIND_TRUNC)
    quad, lin = truncate_batch(sess, [(sq, q_pair), (affine, p_pair)])
    return quad + lin


def ref_x2act(x: RingTensor, params: X2ActParams, v_quad: np.ndarray) -> RingTensor:
    """Oracle with the same rounding: needs the dealer's truncation mask
    values V for the quadratic term (its floor depends on them by at
    most one ulp)."""
    fp = x.fp
    f = fp.frac_bits
    q = params.q_enc(fp)
    sq = (x * x).signed()  # scale 2f, wrap-free under the headroom guard
    num = q * (sq + (v_quad.astype(np.int64) << f))
    quad = (num >> (2 * f)) - ((q * v_quad.astype(np.int64)) >> f)
    affine = x.scale_by(params.w2_enc(fp))
    affine = RingTensor(affine.data + np.uint64((params.b_enc(fp) << f) % fp.modulus), fp)
    lin = _arith_shift(affine, f).signed()
    return RingTensor.from_ints(quad + lin, fp)


# -- batch-norm fusion (plaintext, pre-sharing) --------------------------


def fuse_batchnorm(conv_w: np.ndarray, conv_b: np.ndarray, gamma, beta, mean, var, eps: float = 1e-5):
    """Fold a batch-norm into the preceding convolution, real domain.

    Returns (fused_w, fused_b) with fused(x) == bn(conv(x)) exactly in
    real arithmetic.  Must run before fixed-point encoding.
    """
    gamma, beta = np.asarray(gamma, float), np.asarray(beta, float)
    mean, var = np.asarray(mean, float), np.asarray(var, float)
    if np.any(var + eps <= 0):
        raise ContractError("batch-norm variance must be positive")
    scale = gamma / np.sqrt(var + eps)
    fused_w = conv_w * scale[:, None, None, None]
    fused_b = (np.asarray(conv_b, float) - mean) * scale + beta
    return fused_w, fused_b
