"""Command line entry points: search and finetune."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, DivergenceError, SearchConfig
from .data import load_dataset
from .export import export_weights
from .finetune import finetune
from .lut import arch_latency, load_lut
from .search import extract_arch, search


def _cmd_search(args) -> int:
    cfg = SearchConfig(
        lam=args.lam,
        epochs=args.epochs,
        seed=args.seed,
        backbone=args.backbone,
        batch_size=args.batch_size,
    )
    lut = load_lut(args.lut)
    data = load_dataset(args.data, seed=cfg.seed)
    model, history = search(cfg, data, lut)
    doc = extract_arch(model, lut)
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    print(
        json.dumps(
            {
                "out": str(args.out),
                "steps": len(history),
                "final_val_loss": history[-1]["val_loss"] if history else None,
                "arch_latency_s": arch_latency(doc, lut),
            }
        )
    )
    return 0


def _cmd_finetune(args) -> int:
    try:
        with open(args.arch) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read architecture: {exc}") from exc
    cfg = SearchConfig(epochs=args.epochs, seed=args.seed, batch_size=args.batch_size)
    data = load_dataset(args.data, seed=cfg.seed + 1)
    model, trained_doc, acc = finetune(doc, data, cfg)
    export_weights(model, trained_doc, args.out)
    if args.arch_out:
        with open(args.arch_out, "w") as fh:
            json.dump(trained_doc, fh, indent=1, sort_keys=True)
    print(json.dumps({"out": str(args.out), "accuracy": acc}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="secnn-nas")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("search", help="search activation/pooling gates under a latency penalty")
    s.add_argument("--backbone", default="toy_cnn")
    s.add_argument("--data", default="synthetic")
    s.add_argument("--lut", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_search)

    f = sub.add_parser("finetune", help="train a fixed extracted architecture and export weights")
    f.add_argument("--arch", required=True)
    f.add_argument("--data", default="synthetic")
    f.add_argument("--epochs", type=int, default=30)
    f.add_argument("--batch-size", type=int, default=64)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--arch-out", default=None)
    f.set_defaults(func=_cmd_finetune)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
