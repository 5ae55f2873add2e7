"""Command-line front end: generate networks, run studies, emit CSV tables.

Subcommands: gen-network, assess, cascade, restore, export-lp.  Every study
writes a run manifest (configuration echo, content hash of the network,
backend identity, wall time) next to its CSV output so a run can be
reconstructed exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from . import __version__
from .bilevel import (
    BendersConfig,
    benders_min_cardinality,
    compute_l_max,
    resilience_curve,
)
from .lpio import write_lp, write_mps
from .model import CAP_MICROGRID, CAP_NO_MICROGRID, ModelOptions, build_model
from .network import build_test_network, load_network, save_network, to_dict, validate
from .response import AttackVector, TnDisturbance, autonomous_cascade
from .restore import RestorationConfig, compare_restoration, greedy_restore, served_load_pu
from .solvers import SolveParams, default_backend


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    os.replace(tmp, path)


def _network_from_args(args):
    if args.network:
        return load_network(args.network)
    return build_test_network(args.nodes)


def _attack_from_args(args, spec) -> AttackVector:
    if not args.attack:
        return AttackVector.none(spec.n_nodes)
    nodes = [int(tok) for tok in args.attack.split(",") if tok.strip()]
    return AttackVector.on_nodes(nodes, spec.n_nodes)


def _manifest(args, spec, outdir: str, started: float, extra: dict) -> None:
    payload = json.dumps(to_dict(spec), sort_keys=True).encode()
    manifest = {
        "tool": f"gridres {__version__}",
        "command": " ".join(sys.argv[1:]),
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "network_sha256": hashlib.sha256(payload).hexdigest(),
        "backend": default_backend().name,
        "seed": getattr(args, "seed", 0),
        "wall_time_s": time.perf_counter() - started,
        **extra,
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _add_network_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--nodes", type=int, choices=(24, 36, 118),
                     help="built-in test network size")
    src.add_argument("--network", help="network JSON file")
    p.add_argument("--dv0", type=float, default=0.0, help="substation voltage sag (pu)")
    p.add_argument("--df0", type=float, default=0.0, help="substation frequency sag (pu)")


def _solve_params(args) -> SolveParams:
    return SolveParams(time_limit_s=args.time_limit, seed=getattr(args, "seed", 0))


def cmd_gen_network(args) -> int:
    if args.source:
        spec = load_network(args.source)
    else:
        load_nodes = tuple(int(t) for t in args.load_nodes.split(",")) if args.load_nodes else None
        dg_nodes = tuple(int(t) for t in args.dg_nodes.split(",")) if args.dg_nodes else None
        spec = build_test_network(args.size, load_nodes=load_nodes, dg_nodes=dg_nodes)
    problems = validate(spec)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 1
    save_network(spec, args.output)
    print(f"wrote {args.output} ({spec.n_nodes} nodes, "
          f"{len(spec.connecting_edges)} connecting lines, {len(spec.ders)} DERs)")
    return 0


def cmd_assess(args) -> int:
    started = time.perf_counter()
    spec = _network_from_args(args)
    disturbance = TnDisturbance(args.dv0, args.df0)
    params = _solve_params(args)
    os.makedirs(args.out, exist_ok=True)
    header = ["k_or_target", "engine", "resilience_pct", "cardinality",
              "iterations", "wall_time_s"]
    rows: list[list] = []
    statuses_ok = True
    if args.engine == "enumeration":
        ks = range(0, args.k_max + 1)
        curve = resilience_curve(spec, ks, disturbance, params, workers=args.workers)
        for row in curve:
            for engine, r_key, c_key in (
                ("cascade", "R_AD", "card_AD"),
                ("no_microgrid", "R_MM", "card_MM"),
                ("microgrid", "R_m", "card_m"),
            ):
                rows.append([row["k"], engine, row[r_key], row[c_key],
                             row["iterations"], row["wall_time_s"]])
    else:
        l_max = compute_l_max(spec, disturbance)
        config = BendersConfig(epsilon=args.epsilon, max_iterations=args.max_iterations)
        for target in (float(t) for t in args.targets.split(",")):
            report = benders_min_cardinality(
                spec, (1.0 - target / 100.0) * l_max, disturbance, config,
                params=params, workers=args.workers,
            )
            statuses_ok = statuses_ok and report.target_reached
            rows.append([target, report.engine, report.resilience_pct,
                         report.cardinality, report.iterations, report.wall_time_s])
    _write_csv(os.path.join(args.out, "assess.csv"), header, rows)
    _manifest(args, spec, args.out, started, {"rows": len(rows)})
    print(f"wrote {os.path.join(args.out, 'assess.csv')} ({len(rows)} rows)")
    return 0 if statuses_ok else 1


def cmd_cascade(args) -> int:
    started = time.perf_counter()
    spec = _network_from_args(args)
    result = autonomous_cascade(
        spec, _attack_from_args(args, spec), TnDisturbance(args.dv0, args.df0)
    )
    os.makedirs(args.out, exist_ok=True)
    _write_csv(
        os.path.join(args.out, "cascade_trace.csv"),
        ["round", "component", "node"],
        [[e.round, e.component, e.node] for e in result.trace],
    )
    summary = {
        "loss_total": result.loss.total,
        "vr_cost": result.loss.vr_cost,
        "fr_cost": result.loss.fr_cost,
        "load_control_cost": result.loss.load_control_cost,
        "shed_cost": result.loss.shed_cost,
        "islanding_cost": result.loss.islanding_cost,
        "rounds": result.rounds,
        "tripped_loads": sum(
            1 for i, kc in enumerate(result.response.kc) if kc and spec.nodes[i].pc_max > 0
        ),
        "tripped_dgs": sum(result.response.kg),
    }
    with open(os.path.join(args.out, "cascade_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _manifest(args, spec, args.out, started, {"rounds": result.rounds})
    print(f"cascade settled after {result.rounds} rounds, loss {result.loss.total:.6g}")
    return 0


def cmd_restore(args) -> int:
    started = time.perf_counter()
    spec = _network_from_args(args)
    attack = _attack_from_args(args, spec)
    config = RestorationConfig(
        attack=attack,
        disturbance=TnDisturbance(args.dv0, args.df0),
        budgets=args.ng,
        line_budget=args.line_budget,
    )
    params = _solve_params(args)
    os.makedirs(args.out, exist_ok=True)
    horizon, _ = config.horizon()

    def plan_rows(plan):
        rows = []
        dg_nodes = [i for i in range(spec.n_nodes) if spec.nodes[i].pg_max > 0]
        for t, period in enumerate(plan.periods):
            reconnected = sum(
                1 for i in dg_nodes
                if attack.dg[i] and period.response.kg[i] == 0
            )
            rows.append([
                t, period.loss.total, reconnected,
                sum(1 - k for k in period.response.kline),
                served_load_pu(spec, period.response),
            ])
        return rows

    header = ["t", "loss", "num_reconnected_dgs", "num_closed_lines", "served_load_pu"]
    ok = True
    if args.mip:
        comparison = compare_restoration(
            spec, config, params,
            mip_params=SolveParams(time_limit_s=args.mip_time_limit),
        )
        _write_csv(os.path.join(args.out, "restore_greedy.csv"), header,
                   plan_rows(comparison.greedy))
        _write_csv(os.path.join(args.out, "restore_mip.csv"), header,
                   plan_rows(comparison.mip))
        _write_csv(
            os.path.join(args.out, "restore_comparison.csv"),
            ["t", "greedy_loss", "mip_loss"],
            [[r["t"], r["greedy_loss"], r["mip_loss"]] for r in comparison.rows],
        )
        extra = {
            "horizon": horizon,
            "greedy_total": comparison.greedy.total_loss,
            "mip_total": comparison.mip.total_loss,
            "mip_gap": comparison.mip.gap,
            "greedy_wall_s": comparison.greedy.wall_time_s,
            "mip_wall_s": comparison.mip.wall_time_s,
        }
        print(f"greedy total {comparison.greedy.total_loss:.6g}, "
              f"mip total {comparison.mip.total_loss:.6g} (gap {comparison.mip.gap:.4f})")
    else:
        plan = greedy_restore(spec, config, params)
        _write_csv(os.path.join(args.out, "restore_greedy.csv"), header, plan_rows(plan))
        extra = {"horizon": horizon, "greedy_total": plan.total_loss,
                 "greedy_wall_s": plan.wall_time_s}
        print(f"greedy total {plan.total_loss:.6g} over horizon T={horizon}")
    _manifest(args, spec, args.out, started, extra)
    return 0 if ok else 1


def cmd_export_lp(args) -> int:
    spec = _network_from_args(args)
    attack = _attack_from_args(args, spec)
    capability = CAP_NO_MICROGRID if args.capability == "c" else CAP_MICROGRID
    model = build_model(
        spec, None, attack, TnDisturbance(args.dv0, args.df0),
        ModelOptions(capability=capability),
    )
    text = write_mps(model) if args.format == "mps" else write_lp(model)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {args.output} ({len(model.variables)} variables, "
          f"{len(model.constraints)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridres",
        description="Resilience studies for radial distribution networks with microgrids",
    )
    parser.add_argument("--version", action="version", version=f"gridres {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-network", help="write a network JSON file")
    p.add_argument("size", type=int, nargs="?", choices=(24, 36, 118))
    p.add_argument("--file", dest="source", help="validate and re-emit an existing file")
    p.add_argument("--load-nodes", help="comma-separated override of load node ids")
    p.add_argument("--dg-nodes", help="comma-separated override of DG node ids")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_network)

    p = sub.add_parser("assess", help="resilience curve or min-cardinality attacks")
    _add_network_args(p)
    p.add_argument("--engine", choices=("enumeration", "benders"), default="benders")
    p.add_argument("--k-max", type=int, default=3, help="largest budget (enumeration)")
    p.add_argument("--targets", default="99,95,90,85,80",
                   help="comma-separated resilience targets in percent (benders)")
    p.add_argument("--epsilon", type=float, default=0.5, help="cut-strengthening level")
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--time-limit", type=float, default=120.0, help="per-solve seconds")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("cascade", help="simulate autonomous disconnections")
    _add_network_args(p)
    p.add_argument("--attack", help="comma-separated attacked node ids")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("restore", help="multi-period restoration planning")
    _add_network_args(p)
    p.add_argument("--attack", help="comma-separated attacked node ids")
    p.add_argument("--ng", type=int, default=1, help="DG reconnections per period")
    p.add_argument("--line-budget", type=int, default=None)
    p.add_argument("--mip", action="store_true", help="also solve the monolithic MIP")
    p.add_argument("--time-limit", type=float, default=120.0)
    p.add_argument("--mip-time-limit", type=float, default=600.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("export-lp", help="write the contingency model as LP/MPS")
    _add_network_args(p)
    p.add_argument("--attack", help="comma-separated attacked node ids")
    p.add_argument("--capability", choices=("c", "d"), default="d")
    p.add_argument("--format", choices=("lp", "mps"), default="lp")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export_lp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen-network" and not args.size and not args.source:
        parser.error("gen-network needs a size or --file")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
