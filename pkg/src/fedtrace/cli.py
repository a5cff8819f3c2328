"""Command line entry points.

  fedtrace run        -- execute a simulated FL session, recording telemetry
  fedtrace debug      -- gdb-style replay debugging over a recorded store
  fedtrace experiment -- run an evaluation protocol and print its table
  fedtrace serve      -- HTTP/WebSocket service for the dashboard
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import PartitionMode, PartitionPlan
from .kvio import read_kv, write_kv
from .model import ModelArch, TrainConfig
from .sim import (
    DataConfig,
    FaultSpec,
    SessionConfig,
    SessionRunner,
    evaluate,
    session_config_from_sections,
    session_config_to_sections,
)
from .telemetry import TelemetryStore


def _parse_ids(text: str) -> frozenset[int]:
    text = text.strip()
    if not text:
        return frozenset()
    return frozenset(int(part) for part in text.split(","))


def _build_session_config(args: argparse.Namespace) -> SessionConfig:
    if args.config:
        cfg = session_config_from_sections(read_kv(args.config))
    else:
        cfg = SessionConfig(
            num_rounds=3,
            clients_per_round=10,
            arch=ModelArch((64, 32, 10)),
            train_cfg=TrainConfig(learning_rate=0.1, epochs=10, batch_size=32),
            partition=PartitionPlan(mode=PartitionMode.IID, num_clients=10, seed=0),
        )

    from dataclasses import replace

    if args.rounds is not None:
        cfg = replace(cfg, num_rounds=args.rounds)
    if args.clients is not None:
        cfg = replace(
            cfg,
            partition=replace(cfg.partition, num_clients=args.clients),
            clients_per_round=min(
                args.clients_per_round or args.clients, args.clients
            ),
        )
    elif args.clients_per_round is not None:
        cfg = replace(cfg, clients_per_round=args.clients_per_round)
    if args.partition is not None:
        cfg = replace(cfg, partition=replace(cfg.partition, mode=PartitionMode(args.partition)))
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.arch is not None:
        arch = ModelArch(tuple(int(s) for s in args.arch.split(",")))
        cfg = replace(
            cfg,
            arch=arch,
            data=replace(cfg.data, dim=arch.input_dim, num_classes=arch.num_classes),
        )
    if args.epochs is not None:
        cfg = replace(cfg, train_cfg=replace(cfg.train_cfg, epochs=args.epochs))
    if args.learning_rate is not None:
        cfg = replace(cfg, train_cfg=replace(cfg.train_cfg, learning_rate=args.learning_rate))
    if args.batch_size is not None:
        cfg = replace(cfg, train_cfg=replace(cfg.train_cfg, batch_size=args.batch_size))
    if args.faulty_ids is not None or args.noise_rate is not None:
        faults = FaultSpec(
            client_ids=_parse_ids(args.faulty_ids or ""),
            noise_rate=args.noise_rate if args.noise_rate is not None else 1.0,
            seed=cfg.faults.seed,
        )
        cfg = replace(cfg, faults=faults)
    return cfg


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_session_config(args)
    store = TelemetryStore(args.telemetry_dir, create=True)
    runner = SessionRunner(cfg, store, workers=args.workers)
    final = runner.run()
    # keep the localization defaults with the session so `debug` picks them up
    sections = session_config_to_sections(cfg)
    sections["localization"] = {
        "kappa": str(args.kappa),
        "eta": str(args.eta) if args.eta is not None else "",
        "threshold": str(args.threshold),
    }
    store.put_session_config(sections)
    print(f"recorded {cfg.num_rounds} rounds to {args.telemetry_dir}")
    print(f"final global digest {final.digest()[:16]}")
    if runner.test_dataset is not None:
        print(f"test accuracy {evaluate(final, runner.test_dataset):.4f}")
    report = store.verify_integrity()
    print(f"integrity {'ok' if report.ok else 'FAILED'} ({report.records_checked} records)")
    return 0


def _cmd_debug(args: argparse.Namespace) -> int:
    from .repl import run_repl

    store = TelemetryStore(args.telemetry_dir)
    return run_repl(store)


def _cmd_experiment(args: argparse.Namespace) -> int:
    from . import experiments as ex

    seeds = list(range(args.seeds))
    if args.protocol == "single-fault":
        header, rows = ex.protocol_single_fault(seeds, client_counts=args.client_counts)
    elif args.protocol == "noise-sweep":
        header, rows = ex.protocol_noise_sweep(seeds)
    elif args.protocol == "threshold-sweep":
        header, rows = ex.protocol_threshold_sweep(seeds)
    elif args.protocol == "multi-fault":
        header, rows = ex.protocol_multi_fault(seeds)
    elif args.protocol == "scalability":
        header, rows = ex.protocol_scalability(client_counts=args.client_counts)
    elif args.protocol == "overhead":
        header, rows = ex.protocol_overhead(client_counts=args.client_counts)
    else:
        print(f"unknown protocol {args.protocol}", file=sys.stderr)
        return 2
    print(ex.format_rows(header, rows, style=args.output))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .server import serve

    runner = None
    if args.run_config:
        cfg = session_config_from_sections(read_kv(args.run_config))
        store = TelemetryStore(args.telemetry_dir, create=True)
        runner = SessionRunner(cfg, store)
    serve(
        args.telemetry_dir,
        host=args.host,
        port=args.port,
        runner=runner,
        frontend_dir=args.frontend,
    )
    return 0


def _cmd_export_config(args: argparse.Namespace) -> int:
    cfg = _build_session_config(args)
    write_kv(args.out, session_config_to_sections(cfg))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedtrace")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulated FL session with telemetry")
    run.add_argument("--config", type=Path, help="session config file (key = value sections)")
    run.add_argument("--telemetry-dir", required=True)
    run.add_argument("--rounds", type=int)
    run.add_argument("--clients", type=int)
    run.add_argument("--clients-per-round", type=int)
    run.add_argument("--faulty-ids", help="comma separated client ids")
    run.add_argument("--noise-rate", type=float)
    run.add_argument("--partition", choices=["iid", "noniid"])
    run.add_argument("--seed", type=int)
    run.add_argument("--arch", help="comma separated layer sizes, e.g. 64,32,10")
    run.add_argument("--epochs", type=int)
    run.add_argument("--learning-rate", type=float)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--eta", type=int)
    run.add_argument("--kappa", type=int, default=10)
    run.add_argument("--threshold", type=float, default=0.003)
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    debug = sub.add_parser("debug", help="interactive replay debugger")
    debug.add_argument("telemetry_dir")
    debug.set_defaults(func=_cmd_debug)

    exp = sub.add_parser("experiment", help="run an evaluation protocol")
    exp.add_argument(
        "protocol",
        choices=[
            "single-fault",
            "noise-sweep",
            "threshold-sweep",
            "multi-fault",
            "scalability",
            "overhead",
        ],
    )
    exp.add_argument("--seeds", type=int, default=5, help="number of seeds (0..n-1)")
    exp.add_argument("--client-counts", type=int, nargs="+", default=[10, 30, 50])
    exp.add_argument("--output", choices=["table", "csv"], default="table")
    exp.set_defaults(func=_cmd_experiment)

    srv = sub.add_parser("serve", help="HTTP/WebSocket service over a store")
    srv.add_argument("--telemetry-dir", required=True)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8631)
    srv.add_argument("--run-config", help="also run a live session from this config")
    srv.add_argument("--frontend", help="serve the built dashboard from this directory at /ui")
    srv.set_defaults(func=_cmd_serve)

    exp_cfg = sub.add_parser("export-config", help="write a session config file")
    exp_cfg.add_argument("--out", required=True, type=Path)
    for p in (exp_cfg,):
        p.add_argument("--config", type=Path)
        p.add_argument("--rounds", type=int)
        p.add_argument("--clients", type=int)
        p.add_argument("--clients-per-round", type=int)
        p.add_argument("--faulty-ids")
        p.add_argument("--noise-rate", type=float)
        p.add_argument("--partition", choices=["iid", "noniid"])
        p.add_argument("--seed", type=int)
        p.add_argument("--arch")
        p.add_argument("--epochs", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--batch-size", type=int)
    exp_cfg.set_defaults(func=_cmd_export_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
