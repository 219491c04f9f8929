"""Command-line surface: simulate -> track -> evaluate.

Every failure prints one JSON error record on stderr and exits nonzero.
Output files are written to a temp name and renamed, so an interrupted or
failed run never leaves a partial file behind.
"""
import argparse
import json
import os
import sys
from dataclasses import replace

import yaml

from . import io
from .config import dump_config, load_config
from .engine import LocalizationEngine
from .errors import ConfigError, LumenTrackError, MalformedTree
from .metrics import align_frames, evaluate_localization, evaluate_mot
from .sim import SimScenario, generate_tree, render_frames, tour, validate_path

EXIT_INVALID = 1
EXIT_ERROR = 2


def load_scenario(path):
    """Scenario YAML: any :class:`SimScenario` key plus optional ``path``
    (explicit branch walk), ``targets`` (branches to visit in turn) and
    ``frames`` (sets the speed so the walk lasts about that many frames).

    Returns ``(scenario, graph, path)``.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            d = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("scenario file must hold a mapping")
    walk = d.pop("path", None)
    targets = d.pop("targets", None)
    frames = d.pop("frames", None)
    if walk is not None and targets is not None:
        raise ConfigError("give either path or targets, not both")
    scenario = SimScenario.from_dict(d)
    graph = generate_tree(scenario)
    if walk is None:
        if targets is None:
            targets = [max(graph.leaves(), key=lambda lb: (graph.generation(lb), lb))]
        walk = tour(graph, targets)
    walk = validate_path(graph, walk)
    if frames is not None:
        if int(frames) < 2:
            raise ConfigError("frames must be >= 2")
        dist = sum(graph[b].length for b in walk[:-1]) + scenario.end_s * graph[walk[-1]].length
        scenario = replace(scenario, speed=dist / (int(frames) - 1))
    return scenario, graph, walk


def cmd_simulate(args):
    scenario, graph, walk = load_scenario(args.scenario)
    packets, truths = [], []
    for packet, gt in render_frames(scenario, graph, walk):
        packets.append(io.packet_to_record(packet))
        truths.append(io.truth_to_record(gt))
    io.write_jsonl(os.path.join(args.out, "detections.jsonl"), packets)
    io.write_jsonl(os.path.join(args.out, "truth.jsonl"), truths)
    io.write_graph(os.path.join(args.out, "airway.graph.json"), graph)
    return 0


def engine_config(args):
    cfg = load_config(args.config)
    if args.loop_closure is not None:
        cfg = replace(cfg, loop_closure=replace(cfg.loop_closure, enabled=args.loop_closure == "on"))
    if args.reid == "off":
        cfg = replace(cfg, tracker=replace(cfg.tracker, reid_weight=0.0))
    return cfg


def cmd_track(args):
    graph = io.read_graph(args.graph)
    cfg = engine_config(args)
    eng = LocalizationEngine(graph, cfg)
    tracks, locs = [], []
    try:
        for r in eng.run(io.read_packets(args.detections)):
            tracks.append(io.tracks_record(r.frame, r.tracks))
            locs.append(io.localization_record(r.frame, r.branch, r.votes))
    finally:
        close = getattr(eng.matcher, "close", None)
        if close is not None:
            close()
    io.write_jsonl(os.path.join(args.out, "tracks.jsonl"), tracks)
    io.write_jsonl(os.path.join(args.out, "localization.jsonl"), locs)
    return 0


def per_branch_csv(table: dict) -> str:
    lines = ["branch,frames,correct,accuracy"]
    for lb, row in table.items():
        lines.append(f"{lb},{row['frames']},{row['correct']},{row['accuracy']!r}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args):
    graph = io.read_graph(args.graph)
    cfg = load_config(args.config)
    truth = list(io.read_jsonl(args.truth))
    pred_tracks = list(io.read_jsonl(os.path.join(args.pred, "tracks.jsonl")))
    report = evaluate_mot(align_frames(pred_tracks, truth), cfg.metrics.iou_threshold, cfg.metrics.hota_alphas)
    loc_path = os.path.join(args.pred, "localization.jsonl")
    if os.path.exists(loc_path):
        locs = {r["frame"]: r["branch"] for r in io.read_jsonl(loc_path)}
        tb = {r["frame"]: r["branch"] for r in truth}
        if set(locs) != set(tb):
            from .errors import MisalignedFrames

            raise MisalignedFrames("localization and truth cover different frames")
        keys = sorted(tb)
        loc = evaluate_localization([locs[k] for k in keys], [tb[k] for k in keys], graph)
        report.loc_accuracy = loc.accuracy
        report.loc_error_mean = loc.error_mean
        report.loc_frames = len(keys)
        report.per_branch = loc.per_branch
    doc = {"v": io.SCHEMA_VERSION, **report.to_dict()}
    io.atomic_write_text(os.path.join(args.out, "metrics.json"), json.dumps(doc, indent=1, sort_keys=True) + "\n")
    io.atomic_write_text(os.path.join(args.out, "per_branch.csv"), per_branch_csv(report.per_branch))
    summary = {k: doc[k] for k in ("MOTA", "IDF1", "HOTA", "IDSW", "loc_accuracy")}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_graph_validate(args):
    try:
        g = io.read_graph(args.input)
    except MalformedTree as exc:
        _error(exc)
        return EXIT_INVALID
    print(json.dumps({"ok": True, "branches": len(g), "root": g.root, "depth": max(g.generation(b) for b in g.labels)}))
    return 0


def cmd_config_init(args):
    text = dump_config()
    if args.out:
        io.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lumentrack", description="Airway lumen tracking and branch localization.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic detection stream with ground truth")
    s.add_argument("--scenario", required=True, help="scenario YAML")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="run the engine over a detection stream")
    t.add_argument("--graph", required=True)
    t.add_argument("--detections", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--loop-closure", choices=("on", "off"), default=None)
    t.add_argument("--reid", choices=("on", "off"), default="on")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("evaluate", help="score tracks and localization against truth")
    e.add_argument("--pred", required=True, help="directory holding tracks.jsonl and localization.jsonl")
    e.add_argument("--truth", required=True)
    e.add_argument("--graph", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--out", required=True, help="output directory for metrics.json and per_branch.csv")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("graph", help="airway graph utilities")
    gsub = g.add_subparsers(dest="graph_command", required=True)
    gv = gsub.add_parser("validate", help="check airway graph invariants")
    gv.add_argument("--in", dest="input", required=True)
    gv.set_defaults(func=cmd_graph_validate)

    c = sub.add_parser("config", help="configuration utilities")
    csub = c.add_subparsers(dest="config_command", required=True)
    ci = csub.add_parser("init", help="write the default configuration")
    ci.add_argument("--out", default=None, help="file to write (default stdout)")
    ci.set_defaults(func=cmd_config_init)
    return p


def _error(exc):
    rec = {"v": io.SCHEMA_VERSION, "error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(rec) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LumenTrackError, ValueError, KeyError, TypeError, OSError) as exc:
        _error(exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
