"""Per-party graph execution, dealer planning, and run reports.

The dealer walks the graph once (`plan_randomness`) and issues every
correlated item the online phase will consume, in consumption order;
both servers then execute the layer list sequentially against their
half of the stream.  Server0 owns the model weights, server1 owns the
input and receives the reconstructed logits.

`run_plain_reference` is the plaintext oracle: it replays the same
fixed-point rounding schedule, reading the dealer's truncation masks
(same seed) where the quadratic activation's floor depends on them, so
a seeded secure run reconstructs its output bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import dealer as cr
from .costmodel import HardwareProfile, model_operator
from .graph import GraphSpec, infer_shapes, layer_geometry, weight_names, x2act_params
from .layers import (
    avgpool2pc,
    conv2pc,
    dense2pc,
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
from .protocol import Session
from .ring import ContractError, RingTensor, read_tensor, write_tensor
from .sharing import Party, ShareTensor, rec, shr
from .transport import Channel, MsgType, ProtocolAbort, run_pair, transcript_report


def plan_randomness(graph: GraphSpec, dealer: cr.Dealer):
    """Issue all correlated items, grouped per layer, in consumption order."""
    shapes = infer_shapes(graph)
    plan = []
    for layer, in_shape in zip(graph.layers, shapes[:-1]):
        p = layer.params
        if layer.kind == "conv":
            k, oc = int(p["k"]), int(p["oc"])
            w_shape = (oc, in_shape[1], k, k)
            i0, i1 = issue_conv(dealer, in_shape, w_shape, int(p.get("stride", 1)), int(p.get("pad", 0)))
        elif layer.kind == "dense":
            i0, i1 = issue_dense(dealer, in_shape, (in_shape[1], int(p["units"])))
        elif layer.kind == "relu":
            i0, i1 = issue_relu(dealer, in_shape)
        elif layer.kind == "x2act":
            i0, i1 = issue_x2act(dealer, in_shape, x2act_params(layer, in_shape))
        elif layer.kind == "maxpool":
            i0, i1 = issue_maxpool(dealer, in_shape, int(p["k"]), int(p.get("stride", p["k"])))
        elif layer.kind == "avgpool":
            i0, i1 = issue_avgpool(dealer, in_shape, int(p["k"]), int(p.get("stride", p["k"])))
        else:  # flatten
            i0, i1 = [], []
        plan.append((layer.id, i0, i1))
    return plan


def plan_to_stores(plan):
    s0 = cr.RandomnessStore([h for _, i0, _ in plan for h in i0])
    s1 = cr.RandomnessStore([h for _, _, i1 in plan for h in i1])
    return s0, s1


# -- share provisioning --------------------------------------------------


def _send_tensors(ch: Channel, msg: MsgType, tensors: list) -> None:
    ch.send(msg, b"".join(write_tensor(t) for t in tensors))


def _recv_tensors(ch: Channel, msg: MsgType, count: int) -> list:
    buf = ch.recv(msg)
    out, offset = [], 0
    for _ in range(count):
        t, offset = read_tensor(buf, offset)
        out.append(t)
    return out


def _provision(sess: Session, graph: GraphSpec, weights: dict | None, input_tensor: RingTensor | None):
    """Secret-share weights (from S0) and input (from S1); returns
    (weight shares by name, input share) for this party."""
    names = weight_names(graph)
    if sess.party == Party.S0:
        if weights is None or set(names) - set(weights):
            raise ContractError(f"server0 needs weights for records {names}")
        mine, theirs = {}, []
        for name in names:
            s0, s1 = shr(weights[name], sess.rng)
            mine[name] = sess.share(s0.value)
            theirs.append(s1.value)
        _send_tensors(sess.ch, MsgType.WEIGHT_SHARE, theirs)
        (x_half,) = _recv_tensors(sess.ch, MsgType.INPUT_SHARE, 1)
        return mine, sess.share(x_half)
    if input_tensor is None:
        raise ContractError("server1 needs the input tensor")
    received = _recv_tensors(sess.ch, MsgType.WEIGHT_SHARE, len(names))
    mine = {name: sess.share(t) for name, t in zip(names, received)}
    s0, s1 = shr(input_tensor, sess.rng)
    _send_tensors(sess.ch, MsgType.INPUT_SHARE, [s0.value])
    return mine, sess.share(s1.value)


# -- layer dispatch ------------------------------------------------------


def _exec_layer(sess: Session, layer, cur: ShareTensor, wshares: dict, in_shape) -> ShareTensor:
    p = layer.params
    if layer.kind == "conv":
        bias = wshares.get(f"{layer.id}.b")
        return conv2pc(sess, cur, wshares[f"{layer.id}.w"], bias, int(p.get("stride", 1)), int(p.get("pad", 0)))
    if layer.kind == "dense":
        return dense2pc(sess, cur, wshares[f"{layer.id}.w"], wshares.get(f"{layer.id}.b"))
    if layer.kind == "relu":
        return relu2pc(sess, cur)
    if layer.kind == "x2act":
        return x2act2pc(sess, cur, x2act_params(layer, in_shape))
    if layer.kind == "maxpool":
        return maxpool2pc(sess, cur, int(p["k"]), int(p.get("stride", p["k"])))
    if layer.kind == "avgpool":
        return avgpool2pc(sess, cur, int(p["k"]), int(p.get("stride", p["k"])))
    if layer.kind == "flatten":
        return cur.reshape(cur.shape[0], -1)
    raise ContractError(f"unknown layer kind: {layer.kind}")


def run_server(
    party: Party,
    graph: GraphSpec,
    ch: Channel,
    store: cr.RandomnessStore,
    seed: int,
    weights: dict | None = None,
    input_tensor: RingTensor | None = None,
    hw: HardwareProfile | None = None,
) -> dict:
    """Execute the graph as one server; returns this party's RunReport.

    Server1's report carries the reconstructed logits; server0's carries
    None (it learns nothing about the result).
    """
    sess = Session(party, ch, graph.fp, store, np.random.default_rng([seed, int(party)]))
    shapes = infer_shapes(graph)
    wshares, cur = _provision(sess, graph, weights, input_tensor)
    layer_rows = []
    for layer, in_shape in zip(graph.layers, shapes[:-1]):
        c = ch.counters
        before = (c.bytes_sent, c.rounds, c.virtual_time)
        try:
            cur = _exec_layer(sess, layer, cur, wshares, in_shape)
        except ProtocolAbort as exc:
            raise ProtocolAbort(f"layer {layer.id!r} ({layer.kind}): {exc}") from exc
        row = {
            "id": layer.id,
            "kind": layer.kind,
            "bytes": c.bytes_sent - before[0],
            "rounds": c.rounds - before[1],
            "virtual_time": c.virtual_time - before[2],
        }
        if hw is not None and layer.kind != "flatten":
            row["modeled_latency_s"] = model_operator(layer.kind, layer_geometry(layer, in_shape), hw).latency_s
        layer_rows.append(row)

    # logits reconstruction at the input owner
    if party == Party.S0:
        _send_tensors(ch, MsgType.OUTPUT_SHARE, [cur.value])
        logits = None
    else:
        (other,) = _recv_tensors(ch, MsgType.OUTPUT_SHARE, 1)
        logits = rec(ShareTensor(Party.S0, other), cur)

    totals = {
        "bytes": sum(r["bytes"] for r in layer_rows),
        "rounds": sum(r["rounds"] for r in layer_rows),
        "virtual_time": sum(r["virtual_time"] for r in layer_rows),
    }
    report = {
        "role": f"server{int(party)}",
        "layers": layer_rows,
        "totals": totals,
        "transcript": transcript_report(ch),
        "logits": None if logits is None else logits.decode().tolist(),
        "logit_words": None if logits is None else [int(v) for v in logits.data.ravel()],
    }
    return report


def run_loopback(
    graph: GraphSpec,
    weights: dict,
    input_tensor: RingTensor,
    seed: int,
    sim=None,
    hw: HardwareProfile | None = None,
):
    """All three roles in one process; returns both reports and channels."""
    dealer = cr.Dealer(seed, graph.fp)
    plan = plan_randomness(graph, dealer)
    s0, s1 = plan_to_stores(plan)
    r0, r1, ch0, ch1 = run_pair(
        lambda ch: run_server(Party.S0, graph, ch, s0, seed, weights=weights, hw=hw),
        lambda ch: run_server(Party.S1, graph, ch, s1, seed, input_tensor=input_tensor, hw=hw),
        sim,
    )
    return r0, r1, ch0, ch1


def run_plain_reference(
    graph: GraphSpec,
    input_tensor: RingTensor,
    weights: dict,
    dealer_seed: int | None = None,
) -> RingTensor:
    """Plaintext fixed-point execution with the identical rounding points.

    The quadratic activation's rescale floor depends on the dealer's
    truncation mask by at most one ulp; passing the run's dealer seed
    reproduces it exactly, omitting it uses mask zero.
    """
    shapes = infer_shapes(graph)
    plan = None
    if dealer_seed is not None:
        plan = plan_randomness(graph, cr.Dealer(dealer_seed, graph.fp))
    cur = input_tensor
    for idx, (layer, in_shape) in enumerate(zip(graph.layers, shapes[:-1])):
        p = layer.params
        if layer.kind == "conv":
            cur = ref_conv(
                cur,
                weights[f"{layer.id}.w"],
                weights.get(f"{layer.id}.b"),
                int(p.get("stride", 1)),
                int(p.get("pad", 0)),
            )
        elif layer.kind == "dense":
            cur = ref_dense(cur, weights[f"{layer.id}.w"], weights.get(f"{layer.id}.b"))
        elif layer.kind == "relu":
            cur = ref_relu(cur)
        elif layer.kind == "x2act":
            if plan is not None:
                _, i0, i1 = plan[idx]
                # item 1 of the x2act issue order is the scaled pair
                r_mask = i0[1].tensors["r"] + i1[1].tensors["r"]
                v = r_mask.data >> np.uint64(graph.fp.frac_bits)
            else:
                v = np.zeros(cur.shape, dtype=np.uint64)
            cur = ref_x2act(cur, x2act_params(layer, in_shape), v)
        elif layer.kind == "maxpool":
            cur = ref_maxpool(cur, int(p["k"]), int(p.get("stride", p["k"])))
        elif layer.kind == "avgpool":
            cur = ref_avgpool(cur, int(p["k"]), int(p.get("stride", p["k"])))
        elif layer.kind == "flatten":
            cur = cur.reshape(cur.shape[0], -1)
    return cur


# -- report rendering ----------------------------------------------------


def report_render(report: dict, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report, indent=1, sort_keys=True)
    if fmt != "table":
        raise ContractError(f"unknown report format: {fmt}")
    by_kind: dict = {}
    for row in report.get("layers", []):
        agg = by_kind.setdefault(row["kind"], {"n": 0, "bytes": 0, "virtual_time": 0.0, "modeled": 0.0})
        agg["n"] += 1
        agg["bytes"] += row["bytes"]
        agg["virtual_time"] += row["virtual_time"]
        agg["modeled"] += row.get("modeled_latency_s", 0.0)
    lines = [f"{'kind':<10}{'layers':>7}{'bytes':>12}{'virt_time_s':>14}{'modeled_s':>12}"]
    for kind in sorted(by_kind):
        a = by_kind[kind]
        lines.append(f"{kind:<10}{a['n']:>7}{a['bytes']:>12}{a['virtual_time']:>14.6e}{a['modeled']:>12.4e}")
    t = report.get("totals", {"bytes": 0, "rounds": 0, "virtual_time": 0.0})
    lines.append(f"{'total':<10}{len(report.get('layers', [])):>7}{t['bytes']:>12}{t['virtual_time']:>14.6e}")
    return "\n".join(lines)
