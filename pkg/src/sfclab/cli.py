"""Command-line entry point.

Subcommands: ``gen`` (instance synthesis), ``baseline`` (one episode),
``demos`` (inverse-demonstration datasets), ``lexopt`` (schedule refinement
of a demonstration file), ``eval`` (multi-seed metric tables with figures),
``report`` (comparison figure from eval CSVs), ``dataset`` (inspect and
validate), and ``checkstates`` (stream validation of encoded states for
external agents).

Exit codes: 0 success, 1 usage, 2 data error, 3 budget refusal, 4 bridge
transport failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as dataset_io
from .bridge import BridgeError
from .heuristics import BudgetExceededError, PlacementPolicy
from .invdemo import (
    GenConfig,
    GenerationError,
    InfeasibleScheduleError,
    inverse_generate,
    iterate_demonstrations,
    refine_demonstration,
)
from .simulator import EpisodeConfig, arrivals, evaluate, run_episode

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BUDGET = 3
EXIT_BRIDGE = 4

CSV_COLUMNS = ("seed", "reward", "avg_waiting", "blocked", "efficiency")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--nodes", type=int, default=5, help="server count")
    parser.add_argument("--sfcs", type=int, default=200, help="chain budget M")
    parser.add_argument("--horizon", type=int, default=1000, help="slot-count horizon T")


def _genconfig_from_file(path: str | None, fallback: GenConfig) -> GenConfig:
    if path is None:
        return fallback
    text = Path(path).read_text()
    values = {}
    for name, body in dataset_io.parse_sections(text):
        if name != "generator":
            raise dataset_io.DatasetFormatError(f"config file has unknown section [{name}]")
        for key, entries in body.items():
            tokens = entries[-1]
            if key in ("nodes", "chains", "release_spacing", "max_tracked", "seed"):
                values[key] = int(tokens[0])
            elif key == "extra_edge_prob":
                values[key] = float(tokens[0])
            elif key.endswith("_range"):
                values[key] = (int(tokens[0]), int(tokens[1]))
            else:
                raise dataset_io.DatasetFormatError(f"unknown generator key {key!r}")
    return replace(fallback, **values)


def _episode_config(args) -> EpisodeConfig:
    return EpisodeConfig.table_setup(nodes=args.nodes, sfcs=args.sfcs,
                                     horizon=args.horizon, seed=args.seed)


def cmd_gen(args) -> int:
    cfg = _episode_config(args)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.gen.seed, args.seed)))
    from .invdemo import _random_network
    from .model import Instance

    network = _random_network(cfg.gen, rng)
    chains = arrivals(cfg, rng)
    instance = Instance(network, tuple(chains), cfg.horizon)
    text = dataset_io.format_instance_text(instance)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} ({instance.chain_count} chains, {args.nodes} nodes)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _episode_config(args)
    policy = PlacementPolicy(args.policy, rng_seed=args.policy_seed) \
        if args.policy in ("greedy", "central", "random", "exact") else args.policy
    result = run_episode(cfg, policy, seed=args.seed, endpoint=args.endpoint)
    row = result.metrics.as_row()
    print(", ".join(f"{k}={row[k]:.4g}" for k in ("reward", "avg_waiting", "blocked", "efficiency")))
    if args.out:
        _write_csv(args.out, [(args.seed, row)])
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_demos(args) -> int:
    base = GenConfig(nodes=args.nodes, chains=args.chains)
    cfg = _genconfig_from_file(args.config, base)
    if args.seed is not None:  # the flag wins over the config file
        cfg = replace(cfg, seed=args.seed)
    demos = iterate_demonstrations(cfg, rounds=args.rounds, refine=not args.raw)
    if args.kind == "demos":
        dataset_io.write_dataset(demos, args.out)
    else:
        from .invdemo import demo_windows

        trajectories = []
        for demo in demos:
            trajectories.extend(demo_windows(demo, args.window))
        dataset_io.write_dataset(trajectories, args.out)
    print(f"wrote {args.out} ({args.rounds} rounds, kind={args.kind})")
    return EXIT_OK


def cmd_lexopt(args) -> int:
    loaded = dataset_io.read_dataset(args.infile)
    if loaded.kind != "demonstrations":
        raise dataset_io.DatasetFormatError("lexopt expects a demonstrations dataset")
    refined = [refine_demonstration(demo) for demo in loaded.records]
    dataset_io.write_dataset(refined, args.out)
    moved = sum(
        1 for before, after in zip(loaded.records, refined)
        if not np.array_equal(before.deployment.schedule, after.deployment.schedule)
    )
    print(f"wrote {args.out} ({moved} of {len(refined)} schedules changed)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _episode_config(args)
    policy = PlacementPolicy(args.policy, rng_seed=args.policy_seed) \
        if args.policy in ("greedy", "central", "random", "exact") else args.policy
    seeds = range(args.seed, args.seed + args.seeds)
    table = evaluate(cfg, policy, seeds=seeds, endpoint=args.endpoint, workers=args.workers)
    rows = [(seed, metrics.as_row()) for seed, metrics in table.rows]
    out = Path(args.out) if args.out else Path(f"eval-{args.policy}.csv")
    _write_csv(out, rows)
    mean, std = table.mean(), table.std()
    print(f"wrote {out}")
    for name in ("reward", "avg_waiting", "blocked", "efficiency"):
        print(f"{name:12s} mean {mean[name]:8.3f}  std {std[name]:7.3f}")
    if not args.no_fig:
        from .figures import render_eval_figure

        fig_path = render_eval_figure(rows, args.policy, out.with_suffix(".png"))
        print(f"wrote {fig_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .figures import render_comparison_figure

    tables = {}
    for path in args.infile:
        label = Path(path).stem
        tables[label] = _read_csv(path)
    out = render_comparison_figure(tables, args.out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    loaded = dataset_io.read_dataset(args.infile)
    info = {
        "kind": loaded.kind,
        "records": len(loaded.records),
        "nodes": loaded.node_count,
        "horizon": loaded.horizon,
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_checkstates(args) -> int:
    """Validation mode for external agents: one JSON request per line.

    Request: ``{"type":"check","n":n,"states":[[...],...]}``; response:
    ``{"type":"checked","ok":[true,...]}`` where each flag says whether the
    state keeps every residual non-negative.
    """
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        if request.get("type") != "check":
            print(json.dumps({"type": "error", "message": "expected a check message"}), flush=True)
            continue
        n = int(request["n"])
        flags = [bool(dataset_io.constraints_hold(np.asarray([state]), n))
                 for state in request["states"]]
        print(json.dumps({"type": "checked", "ok": flags}), flush=True)
    return EXIT_OK


def _write_csv(path, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for seed, row in rows:
            writer.writerow([seed, row["reward"], row["avg_waiting"],
                             row["blocked"], row["efficiency"]])


def _read_csv(path):
    rows = []
    with open(path, newline="") as handle:
        for record in csv.DictReader(handle):
            rows.append((int(record["seed"]), {
                "reward": float(record["reward"]),
                "avg_waiting": float(record["avg_waiting"]),
                "blocked": float(record["blocked"]),
                "efficiency": float(record["efficiency"]),
            }))
    return rows


def build_parser() -> _Parser:
    parser = _Parser(prog="sfclab", description="chain placement and scheduling laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize an instance file")
    _add_common(p)
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("baseline", help="run one episode with a policy")
    _add_common(p)
    p.add_argument("--policy", default="greedy",
                   choices=("greedy", "central", "random", "exact", "bridge"))
    p.add_argument("--policy-seed", type=int, default=0)
    p.add_argument("--endpoint", help="bridge endpoint (tcp:HOST:PORT or cmd:...)")
    p.add_argument("--out", help="write a one-row metrics CSV")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("demos", help="generate inverse demonstrations")
    p.add_argument("--config", help="generator config file")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--nodes", type=int, default=5)
    p.add_argument("--chains", type=int, default=6)
    p.add_argument("--raw", action="store_true", help="skip the schedule refinement pass")
    p.add_argument("--kind", choices=("demos", "trajectories"), default="demos")
    p.add_argument("--window", type=int, default=16, help="window length for trajectory export")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_demos)

    p = sub.add_parser("lexopt", help="refine the schedules of a demonstration file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_lexopt)

    p = sub.add_parser("eval", help="multi-seed evaluation table")
    _add_common(p)
    p.add_argument("--policy", default="greedy",
                   choices=("greedy", "central", "random", "exact", "bridge"))
    p.add_argument("--policy-seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="number of seeds, starting at --seed")
    p.add_argument("--endpoint", help="bridge endpoint for --policy bridge")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help="CSV path (defaults to eval-<policy>.csv)")
    p.add_argument("--no-fig", action="store_true", help="skip the figure next to the CSV")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="comparison figure from eval CSVs")
    p.add_argument("--in", dest="infile", nargs="+", required=True)
    p.add_argument("--out", default="comparison.png")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("dataset", help="inspect and validate a dataset file")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("checkstates", help="validate encoded states from stdin")
    p.set_defaults(fn=cmd_checkstates)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BudgetExceededError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except BridgeError as exc:
        print(f"bridge failure: {exc}", file=sys.stderr)
        return EXIT_BRIDGE
    except (dataset_io.DatasetError, GenerationError, InfeasibleScheduleError,
            OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
