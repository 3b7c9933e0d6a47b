"""Command-line front end.

`secnn run` executes one inference session (loopback in one process, or
one role of a two-process TCP session), `secnn lut` exports the modeled
latency table for a graph.  Exit codes: 0 success, 2 protocol abort,
3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import dealer as cr
from .costmodel import HardwareProfile, build_lut, export_lut
from .engine import plan_randomness, plan_to_stores, report_render, run_loopback, run_server
from .graph import GraphSpec, load_weights
from .ring import ContractError, RangeError, load_tensor
from .sharing import Party
from .transport import ProtocolAbort, SimParams, TcpChannel


def _load_hw(path: str | None) -> HardwareProfile:
    if path is None:
        return HardwareProfile(t_bc=50e-6)
    with open(path) as fh:
        return HardwareProfile.from_json(json.load(fh))


def _sim_for(hw: HardwareProfile) -> SimParams:
    return SimParams.from_env(t_bc=hw.t_bc, rt_bw=hw.rt_bw)


def _host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _write_report(report: dict, args) -> None:
    rendered = report_render(report, args.format)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report_render(report, "json"))
    print(rendered)


def _cmd_run(args) -> int:
    graph = GraphSpec.load(args.graph)
    hw = _load_hw(args.hw)
    sim = _sim_for(hw)

    if args.mode == "loopback":
        weights = load_weights(args.weights)
        x = load_tensor(args.input)
        r0, r1, _, _ = run_loopback(graph, weights, x, args.seed, sim, hw)
        _write_report(r1 if args.role != "server0" else r0, args)
        return 0

    # tcp mode: one role per process
    if args.role == "dealer":
        if not args.cr_dir:
            raise ContractError("dealer needs --cr-dir to write correlated randomness")
        plan = plan_randomness(graph, cr.Dealer(args.seed, graph.fp))
        os.makedirs(args.cr_dir, exist_ok=True)
        cr.write_store([h for _, i0, _ in plan for h in i0], os.path.join(args.cr_dir, "server0.pcr"))
        cr.write_store([h for _, _, i1 in plan for h in i1], os.path.join(args.cr_dir, "server1.pcr"))
        return 0

    if not args.cr_dir:
        raise ContractError("tcp servers need --cr-dir (run the dealer role first)")
    party = Party.S0 if args.role == "server0" else Party.S1
    store = cr.load_store(os.path.join(args.cr_dir, f"server{int(party)}.pcr"))
    if args.listen:
        ch = TcpChannel.listen(*_host_port(args.listen), sim=sim)
    elif args.connect:
        ch = TcpChannel.connect(*_host_port(args.connect), sim=sim)
    else:
        raise ContractError("tcp mode needs --listen or --connect")
    try:
        if party == Party.S0:
            report = run_server(party, graph, ch, store, args.seed, weights=load_weights(args.weights), hw=hw)
        else:
            report = run_server(party, graph, ch, store, args.seed, input_tensor=load_tensor(args.input), hw=hw)
    finally:
        ch.close()
    _write_report(report, args)
    return 0


def _cmd_lut(args) -> int:
    graph = GraphSpec.load(args.graph)
    hw = _load_hw(args.hw)
    export_lut(build_lut(graph, hw), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="secnn", description="two-party secure CNN inference engine")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an inference session")
    run.add_argument("--role", choices=["server0", "server1", "dealer"], default="server1")
    run.add_argument("--graph", required=True)
    run.add_argument("--hw", default=None)
    run.add_argument("--weights", default=None)
    run.add_argument("--input", default=None)
    run.add_argument("--mode", choices=["loopback", "tcp"], default="loopback")
    run.add_argument("--listen", default=None, metavar="HOST:PORT")
    run.add_argument("--connect", default=None, metavar="HOST:PORT")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--report", default=None)
    run.add_argument("--cr-dir", default=None)
    run.add_argument("--format", choices=["json", "table"], default="json")
    run.set_defaults(fn=_cmd_run)

    lut = sub.add_parser("lut", help="export the modeled latency table")
    lut.add_argument("--graph", required=True)
    lut.add_argument("--hw", default=None)
    lut.add_argument("--out", required=True)
    lut.set_defaults(fn=_cmd_lut)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ProtocolAbort as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return 2
    except (ContractError, RangeError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
