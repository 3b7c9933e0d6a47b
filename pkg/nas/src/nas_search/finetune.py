"""Training a fixed extracted architecture and evaluating accuracy."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, DivergenceError, SearchConfig
from .data import batches, split_train_val
from .search import _x2act_entry
from .supernet import Supernet, TrainableX2act


def build_network(doc: dict) -> Supernet:
    """Concrete torch network from an architecture document."""
    shape = tuple(int(d) for d in doc["input_shape"])
    if len(shape) != 4:
        raise ConfigError(f"expected an NCHW input shape, got {shape}")
    _, ch, h, w = shape
    meta, modules = [], []
    for layer in doc["layers"]:
        kind, params = layer["kind"], dict(layer.get("params", {}))
        if kind == "conv":
            oc, k, pad = int(params["oc"]), int(params["k"]), int(params.get("pad", 0))
            modules.append(nn.Conv2d(ch, oc, k, padding=pad, bias=params.get("bias", True)))
            ch, h, w = oc, h + 2 * pad - k + 1, w + 2 * pad - k + 1
        elif kind == "relu":
            modules.append(nn.ReLU())
        elif kind == "x2act":
            mod = TrainableX2act(ch * h * w, float(params.get("c", 1.0)))
            with torch.no_grad():
                mod.w1.fill_(float(params.get("w1", 0.0)))
                mod.w2.fill_(float(params.get("w2", 1.0)))
                mod.b.fill_(float(params.get("b", 0.0)))
            modules.append(mod)
        elif kind == "maxpool":
            k = int(params["k"])
            modules.append(nn.MaxPool2d(k))
            h, w = h // k, w // k
        elif kind == "avgpool":
            k = int(params["k"])
            modules.append(nn.AvgPool2d(k))
            h, w = h // k, w // k
        elif kind == "flatten":
            modules.append(nn.Flatten())
        elif kind == "dense":
            modules.append(nn.Linear(ch * h * w, int(params["units"])))
        else:
            raise ConfigError(f"unknown layer kind in architecture: {kind!r}")
        meta.append({"id": layer["id"], "kind": kind, "params": params})
    units = int(doc["layers"][-1]["params"]["units"]) if doc["layers"] else 0
    return Supernet(shape[1:], meta, modules, units)


def accuracy(model: Supernet, x, y) -> float:
    with torch.no_grad():
        pred = model(x).argmax(dim=1)
    return float((pred == y).float().mean())


def finetune(doc: dict, data, cfg: SearchConfig):
    """Trains the fixed architecture on the training half; returns
    (model, updated document with trained activation coefficients,
    held-out accuracy)."""
    torch.manual_seed(cfg.seed)
    model = build_network(doc)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.w_lr, momentum=cfg.w_momentum)
    (xt, yt), (xv, yv) = split_train_val(*data)
    gen = torch.Generator().manual_seed(cfg.seed)
    for _ in range(cfg.epochs):
        for bx, by in batches(xt, yt, cfg.batch_size, gen):
            opt.zero_grad()
            loss = F.cross_entropy(model(bx), by)
            if not math.isfinite(float(loss.detach())):
                raise DivergenceError(f"non-finite finetune loss: {float(loss.detach())}")
            loss.backward()
            opt.step()
    out = {**doc, "layers": []}
    by_id = {m["id"]: mod for m, mod in zip(model.meta, model.chain)}
    for layer in doc["layers"]:
        entry = dict(layer)
        if layer["kind"] == "x2act":
            entry["params"] = _x2act_entry(by_id[layer["id"]])
        out["layers"].append(entry)
    return model, out, accuracy(model, xv, yv)
