"""Layer-graph description and weight container.

Graphs are explicit-shape JSON: both parties parse the same file, so no
shape inference happens at runtime; `infer_shapes` only verifies that
the declared chain is consistent and derives intermediate shapes for
the dealer and the cost model.

Supported layer kinds: conv, dense, relu, x2act, maxpool, avgpool,
flatten.  A layer may carry a `candidates` list (an operator gate from
an architecture search); the runtime executes the layer's own kind, the
latency table enumerates every candidate.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .costmodel import LayerGeometry
from .layers import X2ActParams
from .ring import ContractError, FixedPointConfig, RingTensor, conv_out_size, read_tensor, write_tensor

GRAPH_VERSION = 1

LAYER_KINDS = ("conv", "dense", "relu", "x2act", "maxpool", "avgpool", "flatten")
ACT_GATE = ("relu", "x2act")
POOL_GATE = ("maxpool", "avgpool")


@dataclass
class LayerSpec:
    id: str
    kind: str
    params: dict = field(default_factory=dict)
    candidates: list | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractError(f"unknown layer kind: {self.kind!r}")
        if self.candidates is not None:
            cs = tuple(sorted(self.candidates))
            if cs not in (tuple(sorted(ACT_GATE)), tuple(sorted(POOL_GATE))):
                raise ContractError(f"gate candidates must be {ACT_GATE} or {POOL_GATE}, got {self.candidates}")
            if self.kind not in self.candidates:
                raise ContractError(f"layer kind {self.kind!r} not among its candidates")


@dataclass
class GraphSpec:
    fp: FixedPointConfig
    input_shape: tuple
    layers: list  # of LayerSpec

    def to_json(self) -> dict:
        doc = {
            "version": GRAPH_VERSION,
            "fp": {"total_bits": self.fp.total_bits, "frac_bits": self.fp.frac_bits},
            "input_shape": list(self.input_shape),
            "layers": [],
        }
        for layer in self.layers:
            entry = {"id": layer.id, "kind": layer.kind, "params": layer.params}
            if layer.candidates is not None:
                entry["candidates"] = list(layer.candidates)
            doc["layers"].append(entry)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "GraphSpec":
        if doc.get("version") != GRAPH_VERSION:
            raise ContractError(f"unsupported graph version: {doc.get('version')}")
        fp = FixedPointConfig(int(doc["fp"]["total_bits"]), int(doc["fp"]["frac_bits"]))
        layers = [
            LayerSpec(str(e["id"]), str(e["kind"]), dict(e.get("params", {})), e.get("candidates"))
            for e in doc["layers"]
        ]
        ids = [l.id for l in layers]
        if len(set(ids)) != len(ids):
            raise ContractError("duplicate layer ids")
        g = cls(fp, tuple(int(d) for d in doc["input_shape"]), layers)
        infer_shapes(g)  # validates the chain
        return g

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GraphSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _conv_out(shape, p):
    n, c, h, w = shape
    k, stride, pad = int(p["k"]), int(p.get("stride", 1)), int(p.get("pad", 0))
    oh, ow = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    if oh <= 0 or ow <= 0:
        raise ContractError("kernel does not fit input")
    return (n, int(p["oc"]), oh, ow)


def _pool_out(shape, p):
    n, c, h, w = shape
    k = int(p["k"])
    stride = int(p.get("stride", k))
    return (n, c, conv_out_size(h, k, stride, 0), conv_out_size(w, k, stride, 0))


def infer_shapes(graph: GraphSpec) -> list:
    """Shapes before each layer plus the output shape; raises on breaks."""
    shapes = [graph.input_shape]
    cur = graph.input_shape
    for layer in graph.layers:
        p = layer.params
        if layer.kind == "conv":
            if len(cur) != 4:
                raise ContractError(f"layer {layer.id}: conv needs NCHW input, got {cur}")
            cur = _conv_out(cur, p)
        elif layer.kind == "dense":
            if len(cur) != 2:
                raise ContractError(f"layer {layer.id}: dense needs flattened input, got {cur}")
            cur = (cur[0], int(p["units"]))
        elif layer.kind in ("maxpool", "avgpool"):
            if len(cur) != 4:
                raise ContractError(f"layer {layer.id}: pooling needs NCHW input, got {cur}")
            cur = _pool_out(cur, p)
        elif layer.kind == "flatten":
            cur = (cur[0], int(np.prod(cur[1:])))
        elif layer.kind in ("relu", "x2act"):
            pass
        shapes.append(cur)
    return shapes


def layer_geometry(layer: LayerSpec, in_shape) -> LayerGeometry:
    """Geometry for the cost model; feature maps are assumed square."""
    if len(in_shape) == 4:
        n, c, h, w = in_shape
        fi, ic = h, c
    else:
        fi, ic = 1, int(np.prod(in_shape[1:]))
    if layer.kind == "conv":
        out = _conv_out(in_shape, layer.params)
        return LayerGeometry(fi=fi, ic=ic, fo=out[2], oc=out[1], k=int(layer.params["k"]))
    if layer.kind == "dense":
        return LayerGeometry(fi=fi, ic=ic, fo=1, oc=int(layer.params["units"]), k=1)
    return LayerGeometry(fi=fi, ic=ic)


def x2act_params(layer: LayerSpec, in_shape) -> X2ActParams:
    p = layer.params
    n_x = int(np.prod(in_shape[1:]))
    return X2ActParams(
        w1=float(p.get("w1", 0.0)),
        w2=float(p.get("w2", 1.0)),
        b=float(p.get("b", 0.0)),
        c=float(p.get("c", 1.0)),
        n_x=n_x,
    )


def weight_names(graph: GraphSpec) -> list:
    """Expected weight-container record names, in layer order."""
    names = []
    for layer in graph.layers:
        if layer.kind in ("conv", "dense"):
            names.append(f"{layer.id}.w")
            if layer.params.get("bias", True):
                names.append(f"{layer.id}.b")
    return names


# -- weight container: named PRT1 records --------------------------------

_WGT_MAGIC = b"PWT1"


def save_weights(weights: dict, path) -> None:
    out = [_WGT_MAGIC, struct.pack("<I", len(weights))]
    for name in sorted(weights):
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + write_tensor(weights[name]))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def load_weights(path) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _WGT_MAGIC:
        raise ContractError("bad weight container magic")
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + nlen].decode()
        offset += nlen
        out[name], offset = read_tensor(buf, offset)
    return out


def random_weights(graph: GraphSpec, rng: np.random.Generator, spread: float = 0.5) -> dict:
    """Gaussian-ish real weights encoded at the graph's fixed point."""
    shapes = infer_shapes(graph)
    out = {}
    for layer, in_shape in zip(graph.layers, shapes[:-1]):
        if layer.kind == "conv":
            oc, k = int(layer.params["oc"]), int(layer.params["k"])
            w = rng.uniform(-spread, spread, size=(oc, in_shape[1], k, k))
            out[f"{layer.id}.w"] = RingTensor.encode(w, graph.fp)
            if layer.params.get("bias", True):
                out[f"{layer.id}.b"] = RingTensor.encode(rng.uniform(-spread, spread, size=oc), graph.fp)
        elif layer.kind == "dense":
            units = int(layer.params["units"])
            w = rng.uniform(-spread, spread, size=(in_shape[1], units))
            out[f"{layer.id}.w"] = RingTensor.encode(w, graph.fp)
            if layer.params.get("bias", True):
                out[f"{layer.id}.b"] = RingTensor.encode(rng.uniform(-spread, spread, size=units), graph.fp)
    return out
