"""Fixed-point arithmetic over the power-of-two ring Z_{2^w}.

Everything the protocols compute on lives here: ring elements are stored
as unsigned residues in numpy uint64 arrays and wrap modulo 2^w.  The
signed interpretation maps residues >= 2^(w-1) to negative values.  Real
numbers are embedded with `frac_bits` of fractional precision, so a real
x becomes round(x * 2^f) mod 2^w.

Smaller ring widths (4/8 bits) share the exact same code path and are
used by the exhaustive protocol tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Caller violated an operation's precondition (shape/party/config)."""


class RangeError(ValueError):
    """A real value does not fit the fixed-point format."""


@dataclass(frozen=True)
class FixedPointConfig:
    """Ring width and fixed-point scale.

    frac_bits == 0 selects plain integer mode; protocol-internal values
    (comparison bits, masks) use that.
    """

    total_bits: int = 32
    frac_bits: int = 12

    def __post_init__(self):
        if not 1 <= self.total_bits <= 32:
            raise ContractError(f"total_bits must be in [1, 32], got {self.total_bits}")
        if not 0 <= self.frac_bits < max(self.total_bits - 2, 1):
            raise ContractError(
                f"frac_bits must satisfy 0 <= f < total_bits - 2, got {self.frac_bits}"
            )

    @property
    def modulus(self) -> int:
        return 1 << self.total_bits

    @property
    def mask(self) -> int:
        return self.modulus - 1

    @property
    def half(self) -> int:
        return 1 << (self.total_bits - 1)

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits


DEFAULT_FP = FixedPointConfig()

_U64 = np.uint64


def _as_residues(values, cfg: FixedPointConfig) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == object or np.issubdtype(arr.dtype, np.floating):
        arr = np.array([int(v) for v in arr.ravel()], dtype=object).reshape(arr.shape)
        arr = np.array([v % cfg.modulus for v in arr.ravel()], dtype=_U64).reshape(arr.shape)
        return arr
    arr = arr.astype(np.int64, copy=False)
    return (arr.astype(_U64) & _U64(cfg.mask)).astype(_U64)


@dataclass
class RingTensor:
    """n-dimensional tensor of ring residues with a fixed-point tag."""

    data: np.ndarray
    fp: FixedPointConfig = field(default_factory=FixedPointConfig)

    def __post_init__(self):
        self.data = _as_residues(self.data, self.fp)

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_ints(cls, values, fp: FixedPointConfig = DEFAULT_FP) -> "RingTensor":
        """Wrap signed/unsigned integers into the ring, reducing mod 2^w."""
        return cls(np.asarray(values), fp)

    @classmethod
    def encode(cls, values, fp: FixedPointConfig = DEFAULT_FP) -> "RingTensor":
        """Fixed-point encode real values: round(x * 2^f) mod 2^w."""
        arr = np.asarray(values, dtype=np.float64)
        limit = float(1 << (fp.total_bits - fp.frac_bits - 1))
        if np.any(np.abs(arr) >= limit):
            raise RangeError(f"value out of range for {fp}: |x| must be < {limit}")
        scaled = np.rint(arr * fp.scale).astype(np.int64)
        return cls(scaled, fp)

    @classmethod
    def zeros(cls, shape, fp: FixedPointConfig = DEFAULT_FP) -> "RingTensor":
        return cls(np.zeros(shape, dtype=_U64), fp)

    @classmethod
    def random(cls, shape, rng: np.random.Generator, fp: FixedPointConfig = DEFAULT_FP) -> "RingTensor":
        """Uniform ring elements."""
        return cls(rng.integers(0, fp.modulus, size=shape, dtype=np.uint64), fp)

    # -- views ----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def signed(self) -> np.ndarray:
        """Two's-complement signed interpretation, as int64."""
        u = self.data.astype(np.int64)
        return np.where(u >= self.fp.half, u - self.fp.modulus, u)

    def decode(self) -> np.ndarray:
        """Back to real values at the tensor's fixed-point scale."""
        return self.signed().astype(np.float64) / self.fp.scale

    def item(self) -> int:
        return int(self.signed().reshape(()))

    # -- ring arithmetic -------------------------------------------------

    def _check_conformant(self, other: "RingTensor"):
        if self.fp.total_bits != other.fp.total_bits:
            raise ContractError("ring width mismatch")
        if self.shape != other.shape:
            raise ContractError(f"shape mismatch: {self.shape} vs {other.shape}")

    def _wrap(self, raw: np.ndarray) -> "RingTensor":
        return RingTensor(raw & _U64(self.fp.mask), self.fp)

    def __add__(self, other: "RingTensor") -> "RingTensor":
        self._check_conformant(other)
        return self._wrap(self.data + other.data)

    def __sub__(self, other: "RingTensor") -> "RingTensor":
        self._check_conformant(other)
        return self._wrap(self.data - other.data)

    def __mul__(self, other: "RingTensor") -> "RingTensor":
        self._check_conformant(other)
        return self._wrap(self.data * other.data)

    def __neg__(self) -> "RingTensor":
        return self._wrap(-self.data)

    def scale_by(self, k: int) -> "RingTensor":
        """Multiply by a public integer scalar (mod 2^w)."""
        return self._wrap(self.data * _U64(k % self.fp.modulus))

    def matmul(self, other: "RingTensor") -> "RingTensor":
        if self.fp.total_bits != other.fp.total_bits:
            raise ContractError("ring width mismatch")
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ContractError(f"matmul shapes not conformant: {self.shape} x {other.shape}")
        return self._wrap(self.data @ other.data)

    def reshape(self, *shape) -> "RingTensor":
        return RingTensor(self.data.reshape(*shape), self.fp)

    def __eq__(self, other) -> bool:  # value equality, used by tests
        return (
            isinstance(other, RingTensor)
            and self.fp == other.fp
            and self.shape == other.shape
            and bool(np.all(self.data == other.data))
        )


def fp_encode(x: float, cfg: FixedPointConfig = DEFAULT_FP) -> int:
    """Encode one real number; returns the unsigned residue."""
    return int(RingTensor.encode(np.asarray([x]), cfg).data[0])


def fp_decode(v: int, cfg: FixedPointConfig = DEFAULT_FP) -> float:
    return float(RingTensor.from_ints([v], cfg).decode()[0])


# -- convolution plumbing -----------------------------------------------


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col(x: RingTensor, kh: int, kw: int, stride: int = 1, pad: int = 0) -> RingTensor:
    """Unfold NCHW input into a (N*OH*OW, C*kh*kw) patch matrix.

    Column order is (c, i, j), matching weights reshaped as
    (OC, IC*kh*kw).
    """
    if x.data.ndim != 4:
        raise ContractError(f"im2col expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    if oh <= 0 or ow <= 0:
        raise ContractError("kernel does not fit input")
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=_U64)
    padded[:, :, pad : pad + h, pad : pad + w] = x.data
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=_U64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = padded[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    # (n, oh, ow, c, kh, kw) -> rows are output positions
    mat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)
    return RingTensor(mat, x.fp)


def matmul_plain(a: RingTensor, b: RingTensor) -> RingTensor:
    return a.matmul(b)


def conv2d_plain(x: RingTensor, w: RingTensor, stride: int = 1, pad: int = 0) -> RingTensor:
    """Exact ring convolution (no truncation), NCHW x OIHW -> NCHW."""
    if w.data.ndim != 4:
        raise ContractError(f"weights must be OIHW, got shape {w.shape}")
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if ic != c:
        raise ContractError(f"channel mismatch: input {c}, weights {ic}")
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(wd, kw, stride, pad)
    patches = im2col(x, kh, kw, stride, pad)
    wmat = RingTensor(w.data.reshape(oc, ic * kh * kw).T, w.fp)
    out = patches.matmul(wmat)  # (n*oh*ow, oc)
    return RingTensor(out.data.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2), x.fp)


# -- serialization (PRT1) -----------------------------------------------

_PRT_MAGIC = b"PRT1"


def write_tensor(t: RingTensor) -> bytes:
    dims = t.shape
    head = _PRT_MAGIC + struct.pack("<BBI", t.fp.total_bits, t.fp.frac_bits, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims) if dims else b""
    body = t.data.astype("<u4").tobytes()
    return head + body


def read_tensor(buf: bytes, offset: int = 0) -> tuple[RingTensor, int]:
    """Parse one PRT1 record; returns (tensor, next offset)."""
    if buf[offset : offset + 4] != _PRT_MAGIC:
        raise ContractError("bad tensor magic")
    width, frac, rank = struct.unpack_from("<BBI", buf, offset + 4)
    offset += 10
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(buf, dtype="<u4", count=count, offset=offset).astype(_U64)
    offset += 4 * count
    fp = FixedPointConfig(width, frac)
    return RingTensor(data.reshape(dims), fp), offset


def save_tensor(t: RingTensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_tensor(t))


def load_tensor(path) -> RingTensor:
    with open(path, "rb") as fh:
        t, _ = read_tensor(fh.read())
    return t
