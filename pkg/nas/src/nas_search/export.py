"""Fixed-point weight export in the inference runtime's container format.

PWT1 container: magic, record count, then (u16 name length, name,
PRT1 record) sorted by name.  PRT1 record: magic, u8 ring width, u8
fractional bits, u32 rank, u32 dims, little-endian u32 words.
"""

from __future__ import annotations

import struct

import numpy as np
import torch
from torch import nn

from .config import ConfigError
from .supernet import Supernet

_PRT_MAGIC = b"PRT1"
_WGT_MAGIC = b"PWT1"


def encode_fixed(arr: np.ndarray, total_bits: int, frac_bits: int) -> np.ndarray:
    """Real values to two's-complement ring words; out-of-range values
    are clipped to the encodable interval."""
    half = 1 << (total_bits - 1)
    scaled = np.rint(np.asarray(arr, dtype=np.float64) * (1 << frac_bits))
    scaled = np.clip(scaled, -half, half - 1)
    return (scaled.astype(np.int64) % (1 << total_bits)).astype(np.uint64)


def _prt1_record(words: np.ndarray, total_bits: int, frac_bits: int) -> bytes:
    dims = words.shape
    head = _PRT_MAGIC + struct.pack("<BBI", total_bits, frac_bits, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims) if dims else b""
    return head + words.astype("<u4").tobytes()


def save_weights_fixed(named: dict, total_bits: int, frac_bits: int, path) -> None:
    out = [_WGT_MAGIC, struct.pack("<I", len(named))]
    for name in sorted(named):
        nb = name.encode()
        words = encode_fixed(named[name], total_bits, frac_bits)
        out.append(struct.pack("<H", len(nb)) + nb + _prt1_record(words, total_bits, frac_bits))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def collect_weights(model: Supernet, doc: dict) -> dict:
    """Named real-valued arrays for every conv/dense layer of the
    architecture document, pulled from the trained network.  Dense
    weights are stored input-major to match the runtime layout."""
    by_id = {m["id"]: mod for m, mod in zip(model.meta, model.chain)}
    named = {}
    for layer in doc["layers"]:
        lid, kind = layer["id"], layer["kind"]
        if kind not in ("conv", "dense"):
            continue
        mod = by_id.get(lid)
        if not isinstance(mod, (nn.Conv2d, nn.Linear)):
            raise ConfigError(f"layer {lid!r} has no trained {kind} module")
        with torch.no_grad():
            if kind == "conv":
                named[f"{lid}.w"] = mod.weight.numpy()
            else:
                named[f"{lid}.w"] = mod.weight.t().numpy()
            if mod.bias is not None and layer["params"].get("bias", True):
                named[f"{lid}.b"] = mod.bias.numpy()
    return named


def export_weights(model: Supernet, doc: dict, path) -> None:
    fp = doc["fp"]
    save_weights_fixed(collect_weights(model, doc), fp["total_bits"], fp["frac_bits"], path)
