"""Latency lookup table: JSON consumer and differentiable latency sum."""

from __future__ import annotations

import json

import torch

from .config import ConfigError
from .supernet import Supernet

LUT_VERSION = 1


class Lut:
    """Maps (layer_id, op_kind) to latency seconds."""

    def __init__(self, entries: dict, hardware: dict | None = None):
        self.entries = dict(entries)
        self.hardware = dict(hardware or {})

    def latency(self, layer_id: str, op_kind: str) -> float:
        key = (layer_id, op_kind)
        if key not in self.entries:
            raise ConfigError(f"latency table has no entry for layer {layer_id!r} op {op_kind!r}")
        return self.entries[key]

    def has(self, layer_id: str, op_kind: str) -> bool:
        return (layer_id, op_kind) in self.entries


def load_lut(path) -> Lut:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read latency table: {exc}") from exc
    if doc.get("version") != LUT_VERSION:
        raise ConfigError(f"unsupported latency table version: {doc.get('version')}")
    entries = {}
    for e in doc.get("entries", []):
        entries[(str(e["layer_id"]), str(e["op_kind"]))] = float(e["latency_s"])
    return Lut(entries, doc.get("hardware"))


def latency_of_arch(model: Supernet, lut: Lut) -> torch.Tensor:
    """Theta-weighted latency over all gates; differentiable in alpha."""
    total = None
    for gid, gate in model.gates():
        lats = [lut.latency(gid, name) for name in gate.names]
        th = gate.theta()
        term = (th * torch.tensor(lats, dtype=th.dtype, device=th.device)).sum()
        total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return total


def arch_latency(doc: dict, lut: Lut) -> float:
    """LUT latency of an extracted architecture: sum over its gated
    layers' chosen kinds."""
    out = 0.0
    for layer in doc["layers"]:
        if layer.get("candidates"):
            out += lut.latency(layer["id"], layer["kind"])
    return out
