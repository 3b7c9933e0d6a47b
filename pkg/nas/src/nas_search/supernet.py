"""Gated supernet over small CNN backbones.

Every activation site is a gate mixing {relu, x2act} and every pooling
site a gate mixing {maxpool, avgpool}; the mix weights are the softmax
of per-gate architecture parameters alpha.  Convolution weights are
shared across candidates by default; with shared_conv=False each
activation candidate owns a private copy of the preceding convolution.
"""

from __future__ import annotations

import copy
import math

import torch
from torch import nn

from .config import ConfigError

ACT_CANDIDATES = ("relu", "x2act")
POOL_CANDIDATES = ("maxpool", "avgpool")


class TrainableX2act(nn.Module):
    """Quadratic activation w1*c/sqrt(n_x)*x^2 + w2*x + b with scalar
    trainable coefficients.  n_x is the per-sample element count of the
    site, fixed at build time so exported parameters match the runtime."""

    def __init__(self, n_x: int, c: float = 0.1):
        super().__init__()
        if n_x <= 0:
            raise ConfigError("x2act needs a positive per-sample element count")
        self.n_x = int(n_x)
        self.c = float(c)
        self.w1 = nn.Parameter(torch.zeros(()))
        self.w2 = nn.Parameter(torch.ones(()))
        self.b = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        scale = self.c / math.sqrt(self.n_x)
        return self.w1 * scale * x * x + self.w2 * x + self.b


def stpai_init(model: nn.Module, sigma: float = 0.0, generator=None) -> nn.Module:
    """Reset every quadratic activation to the identity (w1=0, w2=1, b=0),
    optionally perturbed by gaussian noise of scale sigma."""
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, TrainableX2act):
                mod.w1.zero_()
                mod.w2.fill_(1.0)
                mod.b.zero_()
                if sigma > 0:
                    for p in (mod.w1, mod.w2, mod.b):
                        p.add_(torch.randn((), generator=generator) * sigma)
    return model


class GatedOp(nn.Module):
    """Mixes candidate operators by the softmax of its alpha vector.

    All candidates must map a given input to the same output shape.
    Setting .force to a candidate name short-circuits the mix (used for
    extraction checks and hard-path evaluation)."""

    def __init__(self, candidates: dict):
        super().__init__()
        if len(candidates) < 2:
            raise ConfigError("a gate needs at least two candidates")
        self.names = list(candidates)
        self.ops = nn.ModuleDict(candidates)
        self.alpha = nn.Parameter(torch.zeros(len(self.names)))
        self.force: str | None = None

    def theta(self) -> torch.Tensor:
        return torch.softmax(self.alpha, dim=0)

    def forward(self, x):
        if self.force is not None:
            return self.ops[self.force](x)
        th = self.theta()
        out = None
        for i, name in enumerate(self.names):
            term = th[i] * self.ops[name](x)
            out = term if out is None else out + term
        return out


class Supernet(nn.Module):
    """Ordered layer chain with per-layer metadata for export.

    meta entries: {"id", "kind", "params"}; kind is a concrete graph
    kind (conv, dense, flatten, relu, x2act, maxpool, avgpool) or
    "act_gate" / "pool_gate" / "conv_act_gate" for gated sites."""

    def __init__(self, input_shape, meta, modules, num_classes):
        super().__init__()
        self.input_shape = tuple(input_shape)
        self.meta = meta
        self.num_classes = num_classes
        self.chain = nn.ModuleList(modules)
        self.n_forward = 0

    def forward(self, x):
        self.n_forward += 1
        for mod in self.chain:
            x = mod(x)
        return x

    def gates(self) -> list:
        return [(m["id"], mod) for m, mod in zip(self.meta, self.chain) if isinstance(mod, GatedOp)]

    def arch_parameters(self) -> list:
        return [g.alpha for _, g in self.gates()]

    def weight_parameters(self) -> list:
        arch = {id(a) for a in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    def set_force(self, choices: dict | None) -> None:
        """choices maps gate layer id -> candidate name; None clears."""
        for gid, gate in self.gates():
            gate.force = None if choices is None else choices.get(gid)


# backbone structure: (kind, id, params); shapes are NCHW without batch
_BACKBONES = {
    "toy_cnn": {
        "input": (1, 8, 8),
        "layers": [
            ("conv", "c1", {"oc": 4, "k": 3, "pad": 1}),
            ("act", "a1", {}),
            ("pool", "p1", {"k": 2}),
            ("conv", "c2", {"oc": 4, "k": 3, "pad": 1}),
            ("act", "a2", {}),
            ("pool", "p2", {"k": 2}),
            ("flatten", "f", {}),
            ("dense", "d", {}),
        ],
    },
    "toy_2layer": {
        "input": (1, 8, 8),
        "layers": [
            ("conv", "c1", {"oc": 2, "k": 3, "pad": 1}),
            ("act", "a1", {}),
            ("pool", "p1", {"k": 2}),
            ("conv", "c2", {"oc": 2, "k": 3, "pad": 1}),
            ("act", "a2", {}),
            ("flatten", "f", {}),
            ("dense", "d", {}),
        ],
    },
}


def _act_gate(n_x: int, c: float) -> GatedOp:
    return GatedOp({"relu": nn.ReLU(), "x2act": TrainableX2act(n_x, c)})


def _pool_gate(k: int) -> GatedOp:
    return GatedOp({"maxpool": nn.MaxPool2d(k), "avgpool": nn.AvgPool2d(k)})


def build_supernet(
    backbone: str,
    num_classes: int = 2,
    c: float = 0.1,
    shared_conv: bool = True,
) -> Supernet:
    if backbone not in _BACKBONES:
        raise ConfigError(f"unsupported backbone: {backbone!r} (have {sorted(_BACKBONES)})")
    spec = _BACKBONES[backbone]
    ch, h, w = spec["input"]
    meta, modules = [], []
    pending_conv = None  # (id, params, module) awaiting its act gate when unshared
    for kind, lid, params in spec["layers"]:
        if kind == "conv":
            oc, k, pad = params["oc"], params["k"], params.get("pad", 0)
            conv = nn.Conv2d(ch, oc, k, padding=pad)
            ch, h, w = oc, h + 2 * pad - k + 1, w + 2 * pad - k + 1
            if shared_conv:
                meta.append({"id": lid, "kind": "conv", "params": dict(params)})
                modules.append(conv)
            else:
                pending_conv = (lid, dict(params), conv)
        elif kind == "act":
            n_x = ch * h * w
            if pending_conv is None:
                meta.append({"id": lid, "kind": "act_gate", "params": {}})
                modules.append(_act_gate(n_x, c))
            else:
                cid, cparams, conv = pending_conv
                pending_conv = None
                gate = GatedOp(
                    {
                        "relu": nn.Sequential(conv, nn.ReLU()),
                        "x2act": nn.Sequential(copy.deepcopy(conv), TrainableX2act(n_x, c)),
                    }
                )
                meta.append(
                    {"id": lid, "kind": "conv_act_gate", "params": {}, "conv_id": cid, "conv_params": cparams}
                )
                modules.append(gate)
        elif kind == "pool":
            k = params["k"]
            h, w = h // k, w // k
            meta.append({"id": lid, "kind": "pool_gate", "params": dict(params)})
            modules.append(_pool_gate(k))
        elif kind == "flatten":
            meta.append({"id": lid, "kind": "flatten", "params": {}})
            modules.append(nn.Flatten())
        elif kind == "dense":
            meta.append({"id": lid, "kind": "dense", "params": {"units": num_classes}})
            modules.append(nn.Linear(ch * h * w, num_classes))
    if pending_conv is not None:
        raise ConfigError("backbone ends with a convolution that has no activation site")
    net = Supernet(spec["input"], meta, modules, num_classes)
    return stpai_init(net)


def combination_counts(model: Supernet) -> list:
    """Per-convolution-block candidate-combination counts (gate-size
    products between consecutive convolutions)."""
    counts, cur = [], None
    for m, mod in zip(model.meta, model.chain):
        if m["kind"] in ("conv", "conv_act_gate"):
            if cur is not None:
                counts.append(cur)
            cur = 1
        if isinstance(mod, GatedOp) and cur is not None:
            cur *= len(mod.names)
    if cur is not None:
        counts.append(cur)
    return counts
