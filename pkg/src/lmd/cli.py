"""Command-line entry point: ``lmd <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import evaluation, plotting
from .errors import LMDError
from .index import BOW, LMD, DEFAULT_DXY, InvertedIndex
from .maps import (
    DEFAULT_RESOLUTION,
    rasterize,
    read_carmen,
    read_log,
    read_map,
    read_map_dir,
    window_log,
    write_map,
    write_pgm,
)
from .parsing import DEFAULT_EPSILON, DEFAULT_H, DEFAULT_K, DEFAULT_N, parse_map
from .pipeline import ALL_STRATEGIES, PipelineConfig, analyze, map_seed
from .planning import Strategy
from .polestar import DEFAULT_MIN_SPACING, descriptor_rows, sample_keypoints
from .synth import synth_world

log = logging.getLogger("lmd")


def _dump(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _config(args) -> PipelineConfig:
    return PipelineConfig(
        resolution=args.resolution, K=args.K, N=args.N, H=args.H,
        epsilon=args.epsilon, proposal=args.proposal, seed=args.seed,
    )


def _strategies(text: str) -> list[str]:
    names = [s.strip().lower() for s in text.split(",") if s.strip()]
    allowed = set(ALL_STRATEGIES) | {evaluation.ORACLE, evaluation.RANDOM}
    bad = [s for s in names if s not in allowed]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown strategies: {', '.join(bad)}")
    return names


def _add_parse_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, default=DEFAULT_K, help="policy hypotheses")
    p.add_argument("--N", type=int, default=DEFAULT_N, help="splits per hypothesis")
    p.add_argument("--H", type=int, default=DEFAULT_H, help="candidate lines per split")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="wall support distance [m]")
    p.add_argument("--proposal", choices=("data", "uniform"), default="data")
    p.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION, help="grid cell size [m]")
    p.add_argument("--seed", type=int, default=0)


def cmd_parse(args) -> int:
    m = read_map(args.map)
    cfg = _config(args)
    result = parse_map(m, K=cfg.K, N=cfg.N, H=cfg.H, epsilon=cfg.epsilon,
                       seed=map_seed(cfg.seed, m.id), proposal=cfg.proposal)
    out = {"map": m.id, "config": cfg.to_dict(), **result.to_dict()}
    _dump(out, args.json)
    if args.svg:
        plotting.plot_parse(m, result, args.svg)
    return 0


def cmd_plan(args) -> int:
    m = read_map(args.map)
    names = [s.value for s in Strategy] if args.all else [Strategy.parse(args.strategy).value]
    a = analyze(m, _config(args), names)
    vps = [a.viewpoints[s].to_dict() for s in names]
    for s, d in zip(names, vps):
        if s in a.failures:
            d["fallback"] = a.failures[s]
    _dump(vps if args.all else vps[0], args.json)
    if args.svg:
        plotting.plot_parse(m, a.parse, args.svg, {s: a.viewpoints[s] for s in names}, a.grid)
    return 0


def cmd_index_build(args) -> int:
    maps = read_map_dir(args.dir)
    if not maps:
        raise LMDError(f"no map files in {args.dir}")
    strategy = args.strategy.lower()
    if strategy not in ALL_STRATEGIES:
        raise LMDError(f"unknown strategy {args.strategy}")
    cfg = _config(args)
    idx = InvertedIndex(
        D_xy=args.dxy, mode=BOW if strategy == BOW else LMD, step=cfg.features.step,
        meta={"strategy": strategy, "pipeline": cfg.to_dict()},
    )
    for m in maps:
        idx.insert(analyze(m, cfg, (strategy,)).descriptor(strategy))
    idx.save(args.out)
    _dump({"index": str(args.out), "maps": idx.doc_count, "postings": idx.posting_count(),
           "strategy": strategy}, None)
    return 0


def cmd_index_query(args) -> int:
    idx = InvertedIndex.load(args.index)
    strategy = idx.meta.get("strategy", BOW if idx.mode == BOW else "s5")
    cfg = PipelineConfig.from_dict(idx.meta["pipeline"]) if "pipeline" in idx.meta else PipelineConfig()
    m = read_map(args.map)
    q = analyze(m, cfg, (strategy,)).descriptor(strategy)
    result = idx.query(q, top_k=args.top, mode=BOW if args.bow else None)
    out = result.to_dict()
    out["mode"] = BOW if args.bow else idx.mode
    out["strategy"] = strategy
    _dump(out, args.json)
    return 0


def cmd_eval(args) -> int:
    if args.world != "synth":
        raise LMDError("only the synthetic world is built in; pass --world synth")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    cfg = PipelineConfig(
        resolution=args.resolution, K=args.K, N=args.N, H=args.H,
        epsilon=args.epsilon, proposal=args.proposal, seed=seeds[0],
    )
    report = evaluation.run_benchmark(
        seeds, args.strategies, db_size=args.db_size, rooms=args.rooms,
        clutter=args.clutter, drop=args.drop, R_overlap=args.overlap, config=cfg, D_xy=args.dxy,
        max_tasks=args.max_tasks,
    )
    text = report.to_json(include_runtime=args.timings)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    if args.figures:
        fig = Path(args.figures)
        plotting.plot_anr(report, fig / "anr.svg")
        plotting.plot_error_histogram(report, fig / "viewpoint_errors.svg")
    if not args.report and not args.csv:
        sys.stdout.write(text)
    else:
        sys.stdout.write(report.to_csv())
    return 0


def cmd_synth(args) -> int:
    world = synth_world(args.seed, args.rooms, args.clutter, args.drop, revisit_m=args.revisit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = world.clean_maps if args.clean else world.maps
    for m in maps:
        write_map(m, out / f"{m.id}.map")
    pairs = evaluation.find_relevant_pairs(world.clean_maps)
    _dump({"world": world.name, "maps": len(maps), "relevant_pairs": len(pairs),
           "loop_length": world.loop_length}, None)
    return 0


def cmd_window(args) -> int:
    entries = read_carmen(args.log, include_odom=args.odom) if args.carmen else read_log(args.log)
    maps = window_log(entries, args.window, args.stride, source=args.source or Path(args.log).stem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in maps:
        write_map(m, out / f"{m.id}.map")
    _dump({"scans": len(entries), "maps": len(maps)}, None)
    return 0


def cmd_raster(args) -> int:
    m = read_map(args.map)
    grid = rasterize(m, resolution=args.resolution)
    write_pgm(grid, args.out)
    _dump({"map": m.id, "rows": grid.cells.shape[0], "cols": grid.cells.shape[1],
           "carved": grid.carved}, None)
    return 0


def cmd_describe(args) -> int:
    m = read_map(args.map)
    rows = descriptor_rows(m, sample_keypoints(m, args.min_spacing))
    fh = open(args.csv, "w", newline="", encoding="utf-8") if args.csv else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        rows = list(rows)
        D = len(rows[0]) - 4 if rows else 10
        w.writerow(["map_id", "kx", "ky"] + [f"c{i}" for i in range(D)] + ["code"])
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmd", description="Index and retrieve 2D pointset maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", help="parse a map into Manhattan rooms and walls")
    s.add_argument("map")
    _add_parse_options(s)
    s.add_argument("--svg", help="write an overlay figure")
    s.add_argument("--json", help="write JSON here instead of stdout")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("plan", help="plan the unique viewpoint of a map")
    s.add_argument("map")
    s.add_argument("--strategy", default="s5", choices=[x.value for x in Strategy])
    s.add_argument("--all", action="store_true", help="run all five strategies")
    _add_parse_options(s)
    s.add_argument("--svg")
    s.add_argument("--json")
    s.set_defaults(func=cmd_plan)

    idx = sub.add_parser("index", help="build or query an index file").add_subparsers(dest="action", required=True)
    s = idx.add_parser("build")
    s.add_argument("dir")
    s.add_argument("--strategy", default="s5", help="bow or s1..s5")
    s.add_argument("--out", required=True)
    s.add_argument("--dxy", type=float, default=DEFAULT_DXY, help="pose filter [m]")
    _add_parse_options(s)
    s.set_defaults(func=cmd_index_build)
    s = idx.add_parser("query")
    s.add_argument("index")
    s.add_argument("map")
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--bow", action="store_true", help="ignore pose words")
    s.add_argument("--json")
    s.set_defaults(func=cmd_index_query)

    s = sub.add_parser("eval", help="run the synthetic retrieval benchmark")
    s.add_argument("--world", default="synth")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--seeds", help="comma-separated seeds, overrides --seed")
    s.add_argument("--strategies", type=_strategies, default=list(ALL_STRATEGIES))
    s.add_argument("--db-size", type=int, default=100)
    s.add_argument("--rooms", type=int, default=6)
    s.add_argument("--clutter", type=float, default=0.2)
    s.add_argument("--drop", type=float, default=0.2)
    s.add_argument("--overlap", type=float, default=evaluation.R_OVERLAP, help="relevance threshold")
    s.add_argument("--dxy", type=float, default=DEFAULT_DXY)
    s.add_argument("--max-tasks", type=int, help="seeded cap on queried pairs per world")
    s.add_argument("--K", type=int, default=DEFAULT_K)
    s.add_argument("--N", type=int, default=DEFAULT_N)
    s.add_argument("--H", type=int, default=DEFAULT_H)
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    s.add_argument("--proposal", choices=("data", "uniform"), default="data")
    s.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION)
    s.add_argument("--report", help="JSON report path")
    s.add_argument("--csv", help="ANR table path")
    s.add_argument("--figures", help="directory for SVG figures")
    s.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic world's local maps")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rooms", type=int, default=6)
    s.add_argument("--clutter", type=float, default=0.0)
    s.add_argument("--drop", type=float, default=0.0)
    s.add_argument("--revisit", type=float, default=20.0, help="metres driven past one loop")
    s.add_argument("--clean", action="store_true", help="write the clutter-free maps")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("window", help="cut a scan log into local maps")
    s.add_argument("log")
    s.add_argument("--carmen", action="store_true", help="input is a carmen log")
    s.add_argument("--odom", action="store_true", help="keep carmen ODOM lines")
    s.add_argument("--window", type=float, default=5.0)
    s.add_argument("--stride", type=float, default=1.0)
    s.add_argument("--source")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_window)

    s = sub.add_parser("raster", help="rasterize a map to PGM")
    s.add_argument("map")
    s.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_raster)

    s = sub.add_parser("describe", help="dump polestar descriptors as CSV")
    s.add_argument("map")
    s.add_argument("--min-spacing", type=float, default=DEFAULT_MIN_SPACING)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_describe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (LMDError, OSError) as exc:
        print(f"lmd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
