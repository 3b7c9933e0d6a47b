"""Bilevel search step, training loop, and architecture extraction.

One architecture update follows the second-order schedule: a virtual
weight step on the training loss, the validation gradient at the
stepped weights, and a finite-difference Hessian-vector correction.
The step is instrumented: exactly 4 forward and 5 backward passes go
into each alpha update, plus one of each for the weight update.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .config import ConfigError, DivergenceError, SearchConfig
from .data import batches, split_train_val
from .lut import Lut, latency_of_arch
from .supernet import GatedOp, Supernet, TrainableX2act, build_supernet


def _grad(loss, params, counters, retain=False):
    counters["backward"] += 1
    grads = torch.autograd.grad(loss, params, retain_graph=retain, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def _ce(model, batch, counters):
    counters["forward"] += 1
    x, y = batch
    return F.cross_entropy(model(x), y)


def make_optimizers(model: Supernet, cfg: SearchConfig):
    alpha_opt = torch.optim.Adam(model.arch_parameters(), lr=cfg.alpha_lr, betas=cfg.alpha_betas)
    w_opt = torch.optim.SGD(model.weight_parameters(), lr=cfg.w_lr, momentum=cfg.w_momentum)
    return alpha_opt, w_opt


def darts_step(model, alpha_opt, w_opt, train_batch, val_batch, cfg: SearchConfig, lut: Lut) -> dict:
    """One architecture update followed by one weight update.

    Returns instrumentation: forward/backward counts of the alpha
    update, both losses, the modeled latency, and the norm of the
    second-order correction term."""
    w_params = model.weight_parameters()
    a_params = model.arch_parameters()
    if not a_params:
        raise ConfigError("model has no architecture parameters")
    xi = cfg.xi_value
    counters = {"forward": 0, "backward": 0}

    # training gradient at the current weights, then the virtual step
    loss_trn = _ce(model, train_batch, counters)
    g_w = _grad(loss_trn, w_params, counters)
    saved = [p.detach().clone() for p in w_params]
    with torch.no_grad():
        for p, g in zip(w_params, g_w):
            p.sub_(xi * g)

    # validation loss at the stepped weights; gradients wrt alpha and
    # wrt the stepped weights come from separate backward passes
    loss_val = _ce(model, val_batch, counters) + cfg.lam * latency_of_arch(model, lut)
    d_alpha = _grad(loss_val, a_params, counters, retain=True)
    d_wprime = _grad(loss_val, w_params, counters)

    # finite-difference Hessian-vector term around the saved weights
    gnorm = math.sqrt(sum(float(g.pow(2).sum()) for g in d_wprime))
    eps = cfg.eps_scale / max(gnorm, 1e-12)
    with torch.no_grad():
        for p, s, g in zip(w_params, saved, d_wprime):
            p.copy_(s + eps * g)
    d_ap = _grad(_ce(model, train_batch, counters), a_params, counters)
    with torch.no_grad():
        for p, s, g in zip(w_params, saved, d_wprime):
            p.copy_(s - eps * g)
    d_am = _grad(_ce(model, train_batch, counters), a_params, counters)
    with torch.no_grad():
        for p, s in zip(w_params, saved):
            p.copy_(s)
    second = [(gp - gm) / (2 * eps) for gp, gm in zip(d_ap, d_am)]
    second_norm = math.sqrt(sum(float((xi * s).pow(2).sum()) for s in second))

    alpha_opt.zero_grad()
    for p, da, s in zip(a_params, d_alpha, second):
        p.grad = da - xi * s
    alpha_opt.step()

    # standard weight step (outside the alpha instrumentation)
    w_counters = {"forward": 0, "backward": 0}
    loss_w = _ce(model, train_batch, w_counters)
    g = _grad(loss_w, w_params, w_counters)
    w_opt.zero_grad()
    for p, gi in zip(w_params, g):
        p.grad = gi
    w_opt.step()

    stats = {
        "alpha_forward": counters["forward"],
        "alpha_backward": counters["backward"],
        "train_loss": float(loss_trn.detach()),
        "val_loss": float(loss_val.detach()),
        "latency_s": float(latency_of_arch(model, lut).detach()),
        "second_term_norm": second_norm,
        "alpha_grad": [p.grad.detach().clone() for p in a_params],
    }
    if not (math.isfinite(stats["train_loss"]) and math.isfinite(stats["val_loss"])):
        raise DivergenceError(
            f"non-finite loss: train={stats['train_loss']}, val={stats['val_loss']}"
        )
    return stats


def search(cfg: SearchConfig, data, lut: Lut, model: Supernet | None = None):
    """Runs the full search; returns (model, history)."""
    torch.manual_seed(cfg.seed)
    if model is None:
        model = build_supernet(cfg.backbone, cfg.num_classes, cfg.c, cfg.shared_conv)
    alpha_opt, w_opt = make_optimizers(model, cfg)
    (xt, yt), (xv, yv) = split_train_val(*data)
    gen = torch.Generator().manual_seed(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        val_iter = batches(xv, yv, cfg.batch_size, gen)
        for train_batch in batches(xt, yt, cfg.batch_size, gen):
            try:
                val_batch = next(val_iter)
            except StopIteration:
                val_iter = batches(xv, yv, cfg.batch_size, gen)
                val_batch = next(val_iter)
            stats = darts_step(model, alpha_opt, w_opt, train_batch, val_batch, cfg, lut)
            stats.pop("alpha_grad")
            history.append(stats)
    return model, history


def _pick(gate: GatedOp, gid: str, lut: Lut | None) -> str:
    """Argmax over theta; exact ties break toward the cheaper candidate."""
    th = gate.theta().detach()
    best = float(th.max())
    tied = [n for n, t in zip(gate.names, th) if abs(float(t) - best) < 1e-12]
    if len(tied) == 1 or lut is None:
        return tied[0] if len(tied) == 1 else sorted(tied)[0]
    return min(tied, key=lambda n: lut.latency(gid, n))


def _x2act_entry(mod: TrainableX2act) -> dict:
    return {
        "w1": float(mod.w1.detach()),
        "w2": float(mod.w2.detach()),
        "b": float(mod.b.detach()),
        "c": mod.c,
    }


def extract_arch(model: Supernet, lut: Lut | None = None, fp=(32, 12)) -> dict:
    """Hard architecture from the gate parameters, as a graph document
    the inference runtime accepts directly."""
    layers = []
    for m, mod in zip(model.meta, model.chain):
        kind = m["kind"]
        if kind == "act_gate":
            chosen = _pick(mod, m["id"], lut)
            params = _x2act_entry(mod.ops["x2act"]) if chosen == "x2act" else {}
            layers.append(
                {"id": m["id"], "kind": chosen, "params": params, "candidates": ["relu", "x2act"]}
            )
        elif kind == "pool_gate":
            chosen = _pick(mod, m["id"], lut)
            layers.append(
                {
                    "id": m["id"],
                    "kind": chosen,
                    "params": {"k": int(m["params"]["k"])},
                    "candidates": ["maxpool", "avgpool"],
                }
            )
        elif kind == "conv_act_gate":
            chosen = _pick(mod, m["id"], lut)
            layers.append({"id": m["conv_id"], "kind": "conv", "params": dict(m["conv_params"])})
            params = _x2act_entry(mod.ops["x2act"][1]) if chosen == "x2act" else {}
            layers.append(
                {"id": m["id"], "kind": chosen, "params": params, "candidates": ["relu", "x2act"]}
            )
        else:
            layers.append({"id": m["id"], "kind": kind, "params": dict(m["params"])})
    return {
        "version": 1,
        "fp": {"total_bits": fp[0], "frac_bits": fp[1]},
        "input_shape": [1, *model.input_shape],
        "layers": layers,
    }
