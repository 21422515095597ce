"""Command-line entry points.

Subcommands: gen-data, train-predictor, train-vdn, train-iql, evaluate,
sweep, audit.  Common flags: --config <toml>, --seed <int>, --out <dir>.
Exit codes: 0 success, 2 configuration error, 3 divergence abort.

Outputs are deterministic byte-for-byte for a fixed (config, seed).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness, mobility, predictor
from .config import default_config, load_config
from .errors import ConfigError, DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _load(args):
    cfg = load_config(args.config) if args.config else default_config()
    return cfg


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    train, holdout = harness.build_dataset(cfg, args.seed)
    data = np.concatenate([train, holdout], axis=0)
    mobility.write_trajectories_csv(os.path.join(out, "trajectories.csv"), data)
    print(f"wrote {len(data)} trajectories x {cfg.traj_len} slots to {out}/trajectories.csv")
    return EXIT_OK


def cmd_train_predictor(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    data = mobility.read_trajectories_csv(args.data) if args.data else None
    if data is not None and data.shape[2] != cfg.num_users:
        raise ConfigError("dataset user count does not match the config")
    model, curve, report = harness.train_predictor(cfg, args.seed, data)
    predictor.save_predictor(os.path.join(out, "predictor.json"), model)
    harness.write_curve_csv(os.path.join(out, "curve.csv"),
                            list(enumerate(curve)), header=("epoch", "loss"))
    harness.write_summary_json(os.path.join(out, "predictor_report.json"), report)
    print(f"holdout mse {report['holdout_mse']:.4f} "
          f"(persistence {report['persistence_mse']:.4f})")
    return EXIT_OK


def _cmd_train_agents(args, method: str) -> int:
    cfg = _load(args)
    out = _outdir(args)
    model = predictor.load_predictor(args.predictor)
    if model.num_users != cfg.num_users:
        raise ConfigError("predictor checkpoint was trained for a different user count")
    nets, rows = harness.train_agents(cfg, model, args.seed, method)
    harness.save_agents(out, nets)
    harness.write_curve_csv(os.path.join(out, "curve.csv"), rows)
    print(f"{method}: {cfg.epochs} epochs, final mean reward {rows[-1][2]:.4f}")
    return EXIT_OK


def cmd_train_vdn(args) -> int:
    return _cmd_train_agents(args, "vdn")


def cmd_train_iql(args) -> int:
    return _cmd_train_agents(args, "iql")


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    model = predictor.load_predictor(os.path.join(args.checkpoints, "predictor.json"))
    nets = harness.load_agents(args.checkpoints, cfg.num_bs)
    summary, episode_slots = harness.evaluate(cfg, nets, model, args.seed,
                                              episodes=args.episodes)
    harness.write_trace_csv(os.path.join(out, "trace.csv"), cfg, episode_slots)
    harness.write_twin_trace_csv(os.path.join(out, "twin_trace.csv"), cfg, episode_slots)
    harness.write_summary_json(os.path.join(out, "summary.json"), summary)
    print(f"mean reward {summary['mean_reward']:.4f}, "
          f"mean twin error {summary['mean_dnt_error']:.4f}, "
          f"mean total rate {summary['mean_total_rate']:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    grid = [float(v) for v in args.grid.split(",") if v]
    seeds = [int(v) for v in args.seeds.split(",") if v] if args.seeds else [args.seed]
    methods = tuple(m for m in args.methods.split(",") if m)
    rows = harness.sweep(cfg, args.axis, grid, seeds, methods)
    harness.write_sweep_csv(os.path.join(out, "sweep.csv"), rows)
    for r in rows:
        print(f"{r['axis']}={r['value']} {r['method']}: rate {r['mean_rate']:.4f} "
              f"twin error {r['mean_dnt_error']:.4f}")
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    report, episode_slots = harness.audit_random_policy(cfg, args.seed, args.slots)
    harness.write_trace_csv(os.path.join(out, "trace.csv"), cfg, episode_slots)
    harness.write_summary_json(os.path.join(out, "audit.json"), report)
    print(f"{report['slots']} slots, {report['violations']} violations, "
          f"{report['delay_events']} delay events")
    return EXIT_OK if report["violations"] == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dntsim",
                                description="Twin-synchronized wireless network "
                                            "simulator and learning stack")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML config file (defaults built in)")
        sp.add_argument("--seed", type=int, default=0, help="master seed")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("gen-data", help="generate a trajectory dataset CSV")
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train-predictor", help="train the state predictor")
    common(sp)
    sp.add_argument("--data", help="trajectory CSV (generated fresh when omitted)")
    sp.set_defaults(fn=cmd_train_predictor)

    sp = sub.add_parser("train-vdn", help="train cooperative agents")
    common(sp)
    sp.add_argument("--predictor", required=True, help="predictor checkpoint")
    sp.set_defaults(fn=cmd_train_vdn)

    sp = sub.add_parser("train-iql", help="train independent-learner baseline")
    common(sp)
    sp.add_argument("--predictor", required=True, help="predictor checkpoint")
    sp.set_defaults(fn=cmd_train_iql)

    sp = sub.add_parser("evaluate", help="greedy rollouts from checkpoints")
    common(sp)
    sp.add_argument("--checkpoints", required=True,
                    help="directory holding predictor.json and agent_*.json")
    sp.add_argument("--episodes", type=int, default=None)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("sweep", help="retrain and evaluate over a parameter grid")
    common(sp)
    sp.add_argument("--axis", choices=("epsilon", "users"), required=True)
    sp.add_argument("--grid", required=True, help="comma-separated grid values")
    sp.add_argument("--seeds", help="comma-separated per-point seeds (default: --seed)")
    sp.add_argument("--methods", default="vdn,iql")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("audit", help="random-policy constraint audit")
    common(sp)
    sp.add_argument("--slots", type=int, default=10000)
    sp.set_defaults(fn=cmd_audit)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence abort: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
