"""Analytical latency and communication model.

Closed-form per-operator latency on the two-server deployment: a fixed
hardware profile (computational parallelism PP, clock, per-message base
latency T_bc, link bandwidth Rt_bw in bits/second) and per-layer
geometry give each operator a modeled compute term, communication term
and round count.  The comparison-based operators decompose into the
four stages of the OT flow; their communication numerators are what the
transcript-validation check compares against measured channel bytes.

The extra combination rounds of the chunk-folding tree are deliberately
NOT folded into the OT-flow terms; `validate_against_transcript`
reports that structural delta explicitly instead of inflating the
closed forms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .ring import ContractError
from .transport import OT_FLOW_TYPES

RING_BITS = 32
OT_CHUNKS = 16  # 32-bit values, 2-bit chunks
OT_CHOICES = 4


@dataclass(frozen=True)
class HardwareProfile:
    pp: int = 4
    freq: float = 2e8
    t_bc: float = 0.0
    rt_bw: float = 8e9

    def __post_init__(self):
        if self.pp <= 0 or self.freq <= 0 or self.rt_bw <= 0 or self.t_bc < 0:
            raise ContractError("hardware profile values must be positive")

    def to_json(self) -> dict:
        return {"PP": self.pp, "freq": self.freq, "T_bc": self.t_bc, "Rt_bw": self.rt_bw}

    @classmethod
    def from_json(cls, d: dict) -> "HardwareProfile":
        return cls(pp=int(d["PP"]), freq=float(d["freq"]), t_bc=float(d["T_bc"]), rt_bw=float(d["Rt_bw"]))


@dataclass(frozen=True)
class LayerGeometry:
    """Square-feature-map geometry: FI/FO spatial sizes, channels, kernel."""

    fi: int
    ic: int
    fo: int = 0
    oc: int = 0
    k: int = 0

    def to_json(self) -> dict:
        return {"FI": self.fi, "FO": self.fo, "IC": self.ic, "OC": self.oc, "K": self.k}

    @classmethod
    def from_json(cls, d: dict) -> "LayerGeometry":
        return cls(fi=int(d["FI"]), ic=int(d["IC"]), fo=int(d.get("FO", 0)), oc=int(d.get("OC", 0)), k=int(d.get("K", 0)))


def model_ot_flow(geom: LayerGeometry, hw: HardwareProfile) -> dict:
    """The four-stage comparison flow terms, in seconds.

    Numerators are bit counts over FI^2 * IC compared elements:
    setup (32), receiver choices (32*16), sender table (32*4*16), and
    the one-bit results.
    """
    n = geom.fi * geom.fi * geom.ic
    cycles = hw.pp * hw.freq
    return {
        "CMP2": 32 * 17 * n / cycles,
        "CMP3": 32 * (17 + 4 * 16) * n / cycles,
        "CMP4": ((32 * 4 * 16) + 1) * n / cycles,
        "COMM1": hw.t_bc + 32 / hw.rt_bw,
        "COMM2": hw.t_bc + 32 * 16 * n / hw.rt_bw,
        "COMM3": hw.t_bc + 32 * 4 * 16 * n / hw.rt_bw,
        "COMM4": hw.t_bc + n / hw.rt_bw,
    }


def ot_flow_model_bits(geom: LayerGeometry) -> int:
    """Sum of the four COMM numerators, in bits."""
    n = geom.fi * geom.fi * geom.ic
    return 32 + (32 * 16 + 32 * 4 * 16 + 1) * n


@dataclass(frozen=True)
class LutEntry:
    latency_s: float
    comm_bits: int
    rounds: int


OP_KINDS = ("relu", "maxpool", "avgpool", "x2act", "conv", "dense")


def model_operator(kind: str, geom: LayerGeometry, hw: HardwareProfile) -> LutEntry:
    """Closed-form latency for one operator at one geometry."""
    n = geom.fi * geom.fi * geom.ic
    cycles = hw.pp * hw.freq
    if kind == "relu" or kind == "maxpool":
        f = model_ot_flow(geom, hw)
        lat = f["CMP2"] + f["CMP3"] + f["CMP4"] + f["COMM1"] + f["COMM2"] + f["COMM3"] + f["COMM4"]
        rounds = 4
        if kind == "maxpool":
            lat += 3 * hw.t_bc
            rounds += 3
        return LutEntry(lat, ot_flow_model_bits(geom), rounds)
    if kind == "avgpool":
        return LutEntry(2 * n / cycles, 0, 1)
    if kind == "x2act":
        cmp_t = 2 * n / cycles
        comm_t = hw.t_bc + 32 * n / hw.rt_bw
        return LutEntry(cmp_t + 2 * comm_t, 2 * 32 * n, 2)
    if kind in ("conv", "dense"):
        if not (geom.fo and geom.oc and geom.k):
            raise ContractError(f"{kind} geometry needs FO, OC and K")
        cmp_t = 3 * geom.k * geom.k * geom.fo * geom.fo * geom.ic * geom.oc / cycles
        comm_t = hw.t_bc + 32 * n / hw.rt_bw
        return LutEntry(cmp_t + 2 * comm_t, 2 * 32 * n, 2)
    raise ContractError(f"unknown operator kind: {kind}")


@dataclass
class LatencyTable:
    hw: HardwareProfile
    entries: list  # of (layer_id, op_kind, LayerGeometry, LutEntry)

    def total(self) -> float:
        return sum(e.latency_s for _, _, _, e in self.entries)

    def lookup(self, layer_id: str, op_kind: str) -> LutEntry:
        for lid, kind, _, entry in self.entries:
            if lid == layer_id and kind == op_kind:
                return entry
        raise ContractError(f"no table entry for layer {layer_id!r} kind {op_kind!r}")


def build_lut(graph, hw: HardwareProfile) -> LatencyTable:
    """One entry per (layer, candidate operator) over the graph's shapes.

    Layers without gated candidates contribute their own kind; gated
    layers contribute every candidate.
    """
    from .graph import infer_shapes, layer_geometry

    shapes = infer_shapes(graph)
    entries = []
    for layer, in_shape in zip(graph.layers, shapes[:-1]):
        if layer.kind == "flatten":
            continue
        geom = layer_geometry(layer, in_shape)
        for kind in layer.candidates or [layer.kind]:
            entries.append((layer.id, kind, geom, model_operator(kind, geom, hw)))
    return LatencyTable(hw, entries)


LUT_VERSION = 1


def export_lut(table: LatencyTable, path) -> None:
    doc = {
        "version": LUT_VERSION,
        "hardware": table.hw.to_json(),
        "entries": [
            {
                "layer_id": lid,
                "op_kind": kind,
                "geom": geom.to_json(),
                "latency_s": entry.latency_s,
                "comm_bits": entry.comm_bits,
                "rounds": entry.rounds,
            }
            for lid, kind, geom, entry in table.entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def import_lut(path) -> LatencyTable:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != LUT_VERSION:
        raise ContractError(f"unsupported table version: {doc.get('version')}")
    hw = HardwareProfile.from_json(doc["hardware"])
    entries = [
        (
            e["layer_id"],
            e["op_kind"],
            LayerGeometry.from_json(e["geom"]),
            LutEntry(float(e["latency_s"]), int(e["comm_bits"]), int(e["rounds"])),
        )
        for e in doc["entries"]
    ]
    return LatencyTable(hw, entries)


def validate_against_transcript(geom: LayerGeometry, report: dict) -> dict:
    """Compare modeled OT-flow communication against measured bytes.

    `report` is a pair-combined transcript snapshot.  The relative error
    covers only the four flow stages; bytes from the chunk-combination
    exchanges and the share-conversion multiplies are returned as an
    explicit structural delta, not folded into the error.
    """
    by_type = report["bytes_by_type"]
    measured_flow_bits = 8 * sum(by_type.get(int(t), 0) for t in OT_FLOW_TYPES)
    model_bits = ot_flow_model_bits(geom)
    other_bits = 8 * sum(v for k, v in by_type.items() if int(k) not in [int(t) for t in OT_FLOW_TYPES])
    return {
        "model_bits": model_bits,
        "measured_bits": measured_flow_bits,
        "relative_error": abs(measured_flow_bits - model_bits) / model_bits,
        "structural_delta_bits": other_bits,
    }
