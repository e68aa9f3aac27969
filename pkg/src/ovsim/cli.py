"""Command line entry point: run scenarios, sweeps, risk-map dumps, validation.

Exit codes: 0 success, 2 missing file, 3 scenario schema violation (the
diagnostic names the offending field).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from pathlib import Path

import yaml

from .behavior import closing_speed
from .reachability import reachable_polygon
from .riskmap import build_safe_set, velocity_triangles
from .scenario import ScenarioError, load_scenario
from .sim import SimEngine, write_log_csv

EXIT_OK = 0
EXIT_MISSING_FILE = 2
EXIT_SCHEMA = 3

OUTPUT_DIR_ENV = "OVSIM_OUT"


def _default_out() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "out")


def _load(path: str, overrides):
    if not Path(path).is_file():
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING_FILE)
    try:
        return load_scenario(path, overrides)
    except ScenarioError as err:
        print(f"error: invalid scenario: {err}", file=sys.stderr)
        raise SystemExit(EXIT_SCHEMA)
    except yaml.YAMLError as err:
        print(f"error: unparsable scenario file: {err}", file=sys.stderr)
        raise SystemExit(EXIT_SCHEMA)


def _write_metrics(metrics, path: Path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(metrics.to_dict(), f, sort_keys=False)


def cmd_run(args) -> int:
    scenario = _load(args.scenario, args.set)
    if args.serve:
        from .server import serve
        print(f"serving {scenario.name} on ws://127.0.0.1:{args.port}")
        serve(scenario, args.port)
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_dir = None
    if args.dump_sets:
        dump_dir = out / "sets"
        dump_dir.mkdir(exist_ok=True)
    engine = SimEngine(scenario, dump_sets_dir=dump_dir,
                       dump_sets_every=args.dump_sets or 10)
    logs, metrics = engine.run()
    write_log_csv(logs, out / "ticks.csv")
    _write_metrics(metrics, out / "metrics.yaml")
    print(f"{scenario.name}: completion={metrics.completion} "
          f"collision={metrics.collision_occurred} "
          f"timeline={'->'.join(s for s, _ in metrics.timeline)}")
    print(f"wrote {out / 'ticks.csv'} and {out / 'metrics.yaml'}")
    return EXIT_OK


def _sweep_cell(payload):
    path, overrides, v_des, v_lv = payload
    scenario = load_scenario(path, overrides + [
        f"behavior.v_des={v_des}",
        f"traffic[0].speed_profile=[[0.0, {v_lv}]]",
    ])
    _, metrics = SimEngine(scenario).run()
    return v_des, v_lv, metrics


def cmd_sweep(args) -> int:
    if not Path(args.scenario).is_file():
        print(f"error: scenario file not found: {args.scenario}", file=sys.stderr)
        return EXIT_MISSING_FILE
    _load(args.scenario, args.set)  # fail fast on schema problems
    v_des_grid = [float(x) for x in args.v_des.split(",")]
    v_lv_grid = [float(x) for x in args.v_lv.split(",")]
    cells = [(args.scenario, list(args.set), vd, vl)
             for vd in v_des_grid for vl in v_lv_grid]

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "sweep.csv"
    with open(table, "w") as f:
        f.write("v_des,v_lv,completion,collision_occurred,min_clearance,"
                "max_intrusion,fallback_ticks,planner_ticks,timeline\n")
        for v_des, v_lv, m in results:
            timeline = "->".join(s for s, _ in m.timeline)
            f.write(f"{v_des!r},{v_lv!r},{int(m.completion)},"
                    f"{int(m.collision_occurred)},{m.min_clearance!r},"
                    f"{m.max_intrusion!r},{m.fallback_ticks},{m.planner_ticks},"
                    f"{timeline}\n")
    collisions = sum(int(m.collision_occurred) for _, _, m in results)
    completions = sum(int(m.completion) for _, _, m in results)
    print(f"sweep: {len(results)} runs, {completions} completed, "
          f"{collisions} collisions; table at {table}")
    return EXIT_OK


def cmd_dump_riskmap(args) -> int:
    scenario = _load(args.scenario, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    engine = SimEngine(scenario)
    sensed = engine._sensed()
    triangles = [
        velocity_triangles(o, scenario.risk,
                           closing_speed=closing_speed(engine.ego, o.state))
        for o in sensed
    ]
    grid, safe = build_safe_set(engine.ego, engine.road, triangles, scenario.risk)
    grid.to_csv(out / "riskmap.csv")
    horizon_s = scenario.nmpc.n_horizon * scenario.planner_period
    reach = reachable_polygon(engine.ego, scenario.behavior.v_des,
                              scenario.ego_limits, scenario.ego_geometry, horizon_s)
    with open(out / "reach_polygon.csv", "w") as f:
        f.write("x,y\n")
        for x, y in reach.boundary:
            f.write(f"{float(x)!r},{float(y)!r}\n")
    print(f"wrote {out / 'riskmap.csv'} ({int(safe.safe_mask.sum())} safe cells) "
          f"and {out / 'reach_polygon.csv'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    _load(args.scenario, args.set)
    print("scenario is valid")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovsim",
        description="Closed-loop overtaking simulator: maneuver FSM, "
                    "safe/reachable target sets and NMPC trajectory planning.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--scenario", required=True, help="scenario YAML file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario field by dotted path (repeatable)")
        if needs_out:
            p.add_argument("--out", default=_default_out(),
                           help=f"output directory (default: ${OUTPUT_DIR_ENV} or ./out)")

    p_run = sub.add_parser("run", help="run one scenario and write logs/metrics")
    common(p_run)
    p_run.add_argument("--headless", action="store_true", default=True,
                       help="run without the bridge server (default)")
    p_run.add_argument("--serve", action="store_true",
                       help="serve a live session over a websocket instead")
    p_run.add_argument("--port", type=int, default=8700,
                       help="bridge server port (with --serve)")
    p_run.add_argument("--dump-sets", type=int, default=0, metavar="N",
                       help="also dump the risk grid and reachable polygon "
                            "every N planner ticks")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a (v_des x v_lv) velocity grid")
    common(p_sweep)
    p_sweep.add_argument("--v-des", default="10,15,20",
                         help="comma-separated desired ego speeds")
    p_sweep.add_argument("--v-lv", default="2.5,5,7.5",
                         help="comma-separated lead-vehicle speeds")
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel worker processes")
    p_sweep.set_defaults(func=cmd_sweep)

    p_dump = sub.add_parser("dump-riskmap",
                            help="write the tick-0 risk grid and reachable polygon")
    common(p_dump)
    p_dump.set_defaults(func=cmd_dump_riskmap)

    p_val = sub.add_parser("validate-scenario", help="check a scenario file")
    common(p_val, needs_out=False)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run" and args.port is not None:
        if not (1 <= args.port <= 65535):
            print("error: port must be in [1, 65535]", file=sys.stderr)
            return EXIT_SCHEMA
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code)


if __name__ == "__main__":
    sys.exit(main())
