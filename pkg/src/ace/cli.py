"""Command-line surface: training runs, checkpoint evaluation, exact oracle
tables, verification suites, and metrics export.

Exit codes: 0 success, 1 property or criteria failure, 2 usage error.  The
ACE_THREADS environment variable caps the numeric thread pools; it must take
effect before numpy loads, hence the dance at the top of this module.
"""

import os

if "ACE_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["ACE_THREADS"])

import argparse
import csv
import json
import sys
from typing import List, Optional

import numpy as np

from ace import checks
from ace import config as cfgmod
from ace import env as envmod
from ace import learner, oracle, ppo, seeding
from ace.model import ACEModel
from ace.nn.params import ParamStore, load_checkpoint

METRIC_COLUMNS = ("samples", "episodes", "eps", "loss", "success_rate_10",
                  "mean_steps", "steps_gap", "wall_time_s")


def _resolved_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then --set pairs, then direct flags."""
    cfg = cfgmod.default_config()
    if args.config is not None:
        with open(args.config) as f:
            cfg = cfgmod.parse_config(f.read(), cfg)
    for pair in args.set:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"invalid override {pair!r} (expected key=value)")
        cfgmod.set_key(cfg, key.strip(), value.strip())
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.grid is not None:
        cfg["side"] = args.grid
    if args.algo is not None:
        cfg["algo"] = args.algo
    if args.budget is not None:
        cfg["budget"] = args.budget
    if args.order is not None:
        cfg["order"] = args.order
    if args.no_ia:
        cfg["ia"] = False
    return cfg


def _dump_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolved_config(args)
    out = args.out or f"runs/{cfg['algo']}_L{cfg['side']}_s{cfg['seed']}"
    os.makedirs(out, exist_ok=True)
    # Echo the fully resolved config first so the run can be reproduced from it.
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(cfgmod.format_config(cfg))
    ckpt_path = os.path.join(out, "model.ckpt")
    with open(os.path.join(out, "metrics.ndjson"), "w") as f:

        def metrics_fn(record: dict) -> None:
            f.write(json.dumps(record) + "\n")
            f.flush()

        if cfg["algo"] == "ace_ppo":
            summary = ppo.ppo_training_loop(
                cfgmod.build_ppo_config(cfg), cfg["budget"], cfg["seed"],
                metrics_fn=metrics_fn, checkpoint_path=ckpt_path)
        else:
            summary = learner.training_loop(
                cfgmod.build_train_config(cfg), cfg["budget"], cfg["seed"],
                metrics_fn=metrics_fn, checkpoint_path=ckpt_path)
    _dump_json(os.path.join(out, "summary.json"), summary)
    print(json.dumps(summary))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolved_config(args)
    section = "ppo" if cfg["algo"] == "ace_ppo" else "ace"
    grid = envmod.default_config(cfg["side"], cfg["max_steps"])
    store = ParamStore(dtype=np.float32)
    model = ACEModel(store, seeding.make_rng(cfg["seed"], "model-init"),
                     hidden=cfg[f"{section}.hidden"],
                     with_logits=cfg["algo"] == "ace_ppo",
                     ia_enabled=cfg["ia"])
    load_checkpoint(store, args.checkpoint)
    policy = ppo.GreedyLogitPolicy(model) if cfg["algo"] == "ace_ppo" else model
    oracle_mean = None
    if grid.side <= oracle.MAX_ORACLE_SIDE:
        oracle_mean = learner.oracle_mean_steps(grid, cfg[f"{section}.discount"])
    report = learner.evaluate(policy, grid, args.episodes,
                              seeding.make_rng(cfg["seed"], "eval"), oracle_mean)
    report = {"episodes": args.episodes, **report}
    if oracle_mean is not None:
        report["oracle_mean_steps"] = oracle_mean
    if args.out:
        _dump_json(args.out, report)
    print(json.dumps(report))
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    side = args.grid
    if not 3 <= side <= oracle.MAX_ORACLE_SIDE:
        raise ValueError(
            f"oracle tables support sides 3..{oracle.MAX_ORACLE_SIDE}, got {side}")
    grid = envmod.default_config(side)
    model = oracle.build_transition_model(grid)
    sol = oracle.value_iteration_mmdp(grid, args.discount, 1e-10, model)
    legal = oracle.legal_start_mask(grid)
    steps = oracle.policy_expected_steps(model, sol.policy, grid.max_steps)
    p10 = oracle.policy_success_probability(model, sol.policy, 10)
    fixture = {
        "side": side,
        "discount": args.discount,
        "mean_steps": float(steps[legal].mean()),
        "success_rate_10": float(p10[legal].mean()),
    }
    os.makedirs(args.out, exist_ok=True)
    oracle.save_table(os.path.join(args.out, f"oracle_L{side}.tbl"), grid, sol.table)
    with open(os.path.join(args.out, f"oracle_L{side}.txt"), "w") as f:
        for key, value in fixture.items():
            f.write(f"{key} = {value!r}\n")
    print(json.dumps(fixture))
    if side <= 5 and fixture["success_rate_10"] != 1.0:
        print(f"error: greedy oracle success_rate_10 = "
              f"{fixture['success_rate_10']!r} on side {side}, expected 1.0",
              file=sys.stderr)
        return 1
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    names = args.suites or list(checks.SUITES)
    rows = []
    for name in names:
        if name not in checks.SUITES:
            raise ValueError(f"unknown suite {name!r} "
                             f"(expected one of {tuple(checks.SUITES)})")
        if name == "env":
            rows.extend(checks.env_fuzz_suite(steps=args.steps, seed=args.seed))
        else:
            rows.extend(checks.SUITES[name]())
    for row in rows:
        print(f"{'PASS' if row.passed else 'FAIL'} {row.name}: {row.detail}")
    return 0 if all(row.passed for row in rows) else 1


def cmd_export(args: argparse.Namespace) -> int:
    records = []
    with open(args.metrics) as f:
        for n, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"metrics line {n}: {exc}")
            if not isinstance(record, dict):
                raise ValueError(f"metrics line {n}: expected an object")
            records.append(record)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        for record in records:
            writer.writerow(["" if record.get(c) is None else record[c]
                             for c in METRIC_COLUMNS])
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, help="grid side length")
    p.add_argument("--algo", choices=cfgmod.ALGOS)
    p.add_argument("--budget", type=int, help="environment sample budget")
    p.add_argument("--order", choices=("sorted", "shuffle"),
                   help="agent decision order per step")
    p.add_argument("--no-ia", action="store_true", dest="no_ia",
                   help="disable passive composition onto action targets")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ace",
        description="Sequential-decision value learning on the spiders-and-fly grid.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training loop, writing run artifacts")
    _add_run_flags(p)
    p.add_argument("--out", help="output directory "
                                 "(default runs/<algo>_L<side>_s<seed>)")

    p = sub.add_parser("eval", help="greedy evaluation of a saved checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--out", help="optional report file")

    p = sub.add_parser("oracle", help="exact value table and fixture for a small grid")
    p.add_argument("--grid", type=int, required=True)
    p.add_argument("--discount", type=float, default=0.99)
    p.add_argument("--out", default=".")

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("suites", nargs="*", metavar="suite",
                   help="any of: equivalence, gradients, env (default all)")
    p.add_argument("--steps", type=int, default=1_000_000,
                   help="environment fuzz length")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export", help="convert a metrics stream to CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"train": cmd_train, "eval": cmd_eval, "oracle": cmd_oracle,
               "verify": cmd_verify, "export": cmd_export}[args.command]
    try:
        return handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
