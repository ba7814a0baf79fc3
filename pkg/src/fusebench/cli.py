"""Command line entry point: one executable, six pipeline subcommands
plus report merging.

Exit codes: 0 success, 1 contract violation (including bad arguments),
2 I/O failure. Config precedence: CLI flags override config-file values
override built-in defaults; every report embeds the resolved config so a
run can be reproduced from its own output.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .colorpipe import develop_frame
from .core import (ContractError, FrameIOError, FusebenchError,
                   SequenceSpec, StructuralError, VideoSequence,
                   load_frame, load_manifest, load_sequence, save_sequence)
from .defocus import (compute_coc, load_depth_maps, load_mask_set,
                      select_focal_depths, spatially_varying_blur)
from .flow import FlowEstimatorConfig, estimate_flow, write_flo
from .fusers import fuse_max, fuse_mean
from .metrics import (AGGREGATION_DEFAULTS, FloDirectoryProvider,
                      InternalFlowProvider, evaluate_sequences)
from .screening import ScreenThresholds, screen_scene_set

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_IO = 2

DEPTH_NAMES = {"8bit": "8", "10bit-in-16bit": "10-in-16", "16bit": "16"}

SUBCOMMANDS = ("gen-mef", "gen-mff", "screen", "flow", "fuse", "evaluate",
               "merge")

CSV_METRIC_ORDER = ("VIF", "SSIM", "MI", "Qabf", "BiSWE", "MS2R")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors through the exit-1 path."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ContractError(message)


def _jobs_default():
    try:
        return max(1, int(os.environ.get("VFB_JOBS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items, jobs):
    """Index-ordered parallel map; identical output for any job count."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _load_config_section(path, subcommand):
    path = Path(path)
    if not path.is_file():
        raise FrameIOError("config file %s does not exist" % path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StructuralError("config %s is not valid JSON: %s" % (path, exc))
    if not isinstance(doc, dict):
        raise StructuralError("config %s must be a JSON object" % path)
    if subcommand in doc and isinstance(doc[subcommand], dict):
        return doc[subcommand]
    if any(k in SUBCOMMANDS for k in doc):
        return {}
    return doc


def _resolve_config(args, defaults):
    """defaults <- config file <- CLI flags; returns the final dict."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        section = _load_config_section(args.config, args.subcommand)
        for key, value in section.items():
            if key not in defaults:
                raise ContractError(
                    "config key %r is not a %s parameter"
                    % (key, args.subcommand))
            resolved[key] = value
    for key in defaults:
        cli_value = getattr(args, key.replace("-", "_"), None)
        if cli_value is not None:
            resolved[key] = cli_value
    return resolved


def _write_json(path, payload):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True)
                              + "\n")
    except OSError as exc:
        raise FrameIOError("could not write report %s: %s" % (path, exc))


def _write_csv(path, header, rows):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise FrameIOError("could not write CSV %s: %s" % (path, exc))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return "%.10g" % value
    return str(value)


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--jobs", type=int, default=None,
                     help="worker threads (default: VFB_JOBS or 1)")
    sub.add_argument("--seed", type=int, default=None,
                     help="reserved; recorded in reports")


def _seq_spec_args(sub, default_depth="8bit"):
    sub.add_argument("--input-depth", choices=sorted(DEPTH_NAMES),
                     default=None,
                     help="stored bit depth of input frames (default %s)"
                     % default_depth)
    sub.add_argument("--input-scaling",
                     choices=("left-justified", "value-scaled"), default=None,
                     help="10-in-16 container convention")


def build_parser():
    parser = _Parser(prog="fusebench",
                     description="Video fusion benchmark toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = subs.add_parser("gen-mef", parents=[], add_help=True,
                        help="synthesize an over/under exposure pair from "
                             "an HLG source")
    p.add_argument("--input", required=True, help="HLG/BT.2020 frame dir")
    p.add_argument("--ev", type=float, default=None,
                   help="exposure push in stops (default 3)")
    p.add_argument("--out-over", required=True)
    p.add_argument("--out-under", required=True)
    p.add_argument("--report", help="optional JSON run record")
    _seq_spec_args(p, "10bit-in-16bit")
    _add_common(p)

    p = subs.add_parser("gen-mff", help="synthesize a far/near focus pair "
                                        "from depth and masks")
    p.add_argument("--input", required=True, help="all-in-focus frame dir")
    p.add_argument("--depth", required=True,
                   help="normalized inverse depth PNG dir")
    p.add_argument("--masks", required=True, help="object label PNG dir")
    p.add_argument("--sigma", type=float, default=None,
                   help="blur strength factor (default 0.025)")
    p.add_argument("--out-far", required=True)
    p.add_argument("--out-near", required=True)
    p.add_argument("--report", help="optional JSON run record")
    _seq_spec_args(p)
    _add_common(p)

    p = subs.add_parser("screen", help="three-stage IR/visible quality screen")
    p.add_argument("--manifest", required=True)
    p.add_argument("--h-min", type=float, default=None)
    p.add_argument("--sigma-min", type=float, default=None)
    p.add_argument("--dark-max", type=float, default=None)
    p.add_argument("--dark-level", type=int, default=None)
    p.add_argument("--drop-bottom", type=float, default=None)
    p.add_argument("--drop-top-illum", type=float, default=None)
    p.add_argument("--frame-fail-limit", type=float, default=None)
    p.add_argument("--h-max", type=float, default=None,
                   help="pin the entropy normalization maximum")
    p.add_argument("--sigma-max", type=float, default=None,
                   help="pin the contrast normalization maximum")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--csv", help="CSV report path")
    _add_common(p)

    p = subs.add_parser("flow", help="estimate flow between two PNGs")
    p.add_argument("--a", required=True, help="source frame (flow anchor)")
    p.add_argument("--b", required=True, help="destination frame")
    p.add_argument("--out", required=True, help=".flo output path")
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--smoothing", type=float, default=None)
    _add_common(p)

    p = subs.add_parser("fuse", help="run a baseline fuser over two "
                                     "sequences")
    p.add_argument("--method", choices=("max", "mean"), required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="optional JSON run record")
    _add_common(p)

    p = subs.add_parser("evaluate", help="full metric protocol over a "
                                         "fused sequence")
    p.add_argument("--fused", required=True)
    p.add_argument("--src-a", required=True)
    p.add_argument("--src-b", required=True)
    p.add_argument("--task", choices=("mef", "mff", "ivf", "mvf"),
                   default=None, help="loss preset (default ivf)")
    p.add_argument("--flows", default=None,
                   help="'internal' or a directory of .flo files")
    p.add_argument("--method", default=None,
                   help="method label used by merge (default 'unnamed')")
    p.add_argument("--agg-vif", choices=("sum", "mean"), default=None)
    p.add_argument("--agg-mi", choices=("sum", "mean"), default=None)
    p.add_argument("--agg-ssim", choices=("sum", "mean"), default=None)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--csv", help="CSV report path")
    _add_common(p)

    p = subs.add_parser("merge", help="merge evaluate reports into one "
                                      "table")
    p.add_argument("--inputs", nargs="+", required=True,
                   help="evaluate JSON reports")
    p.add_argument("--report", help="merged JSON path")
    p.add_argument("--csv", help="merged CSV path")
    _add_common(p)
    return parser


def _run_record(cfg, outputs, extra=None):
    rec = {"config": cfg, "outputs": sorted(outputs)}
    rec.update(extra or {})
    return rec


def cmd_gen_mef(args):
    defaults = {"input": None, "ev": 3.0, "out_over": None,
                "out_under": None, "input_depth": "10bit-in-16bit",
                "input_scaling": "left-justified", "jobs": _jobs_default(),
                "seed": None}
    cfg = _resolve_config(args, defaults)
    spec = SequenceSpec(encoding="HLG", primaries="BT2020",
                        bit_depth=DEPTH_NAMES[cfg["input_depth"]],
                        scaling=cfg["input_scaling"])
    seq = load_sequence(cfg["input"], spec)
    ev = float(cfg["ev"])
    if not ev > 0.0:
        raise ContractError("--ev must be positive")
    over = _parallel_map(lambda f: develop_frame(f, +ev), seq, cfg["jobs"])
    under = _parallel_map(lambda f: develop_frame(f, -ev), seq, cfg["jobs"])
    mk = lambda frames, role: VideoSequence(frames=tuple(frames), fps=seq.fps,
                                            scene_id=seq.scene_id, role=role)
    save_sequence(mk(over, "source-A"), cfg["out_over"])
    save_sequence(mk(under, "source-B"), cfg["out_under"])
    if args.report:
        _write_json(args.report, _run_record(
            cfg, [cfg["out_over"], cfg["out_under"]],
            {"frames": len(seq)}))
    return EXIT_OK


def cmd_gen_mff(args):
    defaults = {"input": None, "depth": None, "masks": None, "sigma": 0.025,
                "out_far": None, "out_near": None, "input_depth": "8bit",
                "input_scaling": "left-justified", "jobs": _jobs_default(),
                "seed": None}
    cfg = _resolve_config(args, defaults)
    spec = SequenceSpec(bit_depth=DEPTH_NAMES[cfg["input_depth"]],
                        scaling=cfg["input_scaling"])
    seq = load_sequence(cfg["input"], spec)
    depths = load_depth_maps(cfg["depth"])
    masks = load_mask_set(cfg["masks"])
    if len(depths) != len(seq) or len(masks) != len(seq):
        raise StructuralError(
            "frame/depth/mask counts differ: %d/%d/%d"
            % (len(seq), len(depths), len(masks)))
    far_fd, near_fd = select_focal_depths(depths, masks)
    sigma = float(cfg["sigma"])

    def render(t):
        frame, dm = seq[t], depths[t]
        out = []
        for fd in (far_fd, near_fd):
            coc = compute_coc(dm.values, fd, sigma)
            out.append(frame.with_data(
                np.clip(spatially_varying_blur(frame.data, coc), 0.0, 1.0)))
        return out

    rendered = _parallel_map(render, range(len(seq)), cfg["jobs"])
    mk = lambda frames, role: VideoSequence(frames=tuple(frames), fps=seq.fps,
                                            scene_id=seq.scene_id, role=role)
    save_sequence(mk([r[0] for r in rendered], "source-A"), cfg["out_far"])
    save_sequence(mk([r[1] for r in rendered], "source-B"), cfg["out_near"])
    if args.report:
        _write_json(args.report, _run_record(
            cfg, [cfg["out_far"], cfg["out_near"]],
            {"frames": len(seq),
             "focal_depths": {"far": far_fd, "near": near_fd}}))
    return EXIT_OK


def cmd_screen(args):
    defaults = {"manifest": None, "h_min": 6.0, "sigma_min": 30.0,
                "dark_max": 0.05, "dark_level": 10, "drop_bottom": 0.10,
                "drop_top_illum": 0.25, "frame_fail_limit": 0.0,
                "h_max": None, "sigma_max": None,
                "jobs": _jobs_default(), "seed": None}
    cfg = _resolve_config(args, defaults)
    manifest = load_manifest(cfg["manifest"])
    if not manifest.scenes:
        raise StructuralError("manifest lists no scenes")
    spec = SequenceSpec(bit_depth="8")

    def load_scene(entry):
        for role in ("source-A", "source-B"):
            if role not in entry.roles:
                raise StructuralError(
                    "scene %s: screening needs role %s" % (entry.scene_id,
                                                           role))
        ir = load_sequence(manifest.root / entry.roles["source-A"], spec,
                           fps=entry.fps, scene_id=entry.scene_id,
                           role="source-A")
        rgb = load_sequence(manifest.root / entry.roles["source-B"], spec,
                            fps=entry.fps, scene_id=entry.scene_id,
                            role="source-B")
        return (entry.scene_id, ir, rgb)

    scenes = _parallel_map(load_scene, manifest.scenes, cfg["jobs"])
    th = ScreenThresholds(
        h_min=float(cfg["h_min"]), sigma_min=float(cfg["sigma_min"]),
        dark_max=float(cfg["dark_max"]), dark_level=int(cfg["dark_level"]),
        drop_bottom=float(cfg["drop_bottom"]),
        drop_top_illum=float(cfg["drop_top_illum"]),
        frame_fail_limit=float(cfg["frame_fail_limit"]),
        h_max=cfg["h_max"], sigma_max=cfg["sigma_max"])
    report = screen_scene_set(scenes, th)
    payload = report.to_dict()
    payload["config"] = cfg
    if args.report:
        _write_json(args.report, payload)
    if args.csv:
        rows = [[s["scene_id"], _fmt(s["mean_H"]), _fmt(s["mean_sigma"]),
                 _fmt(s["mean_D"]), _fmt(s["mean_L"]), _fmt(s["score"]),
                 _fmt(s["kept"]), "; ".join(s["discard_reasons"])]
                for s in payload["scenes"]]
        _write_csv(args.csv,
                   ["scene_id", "mean_H", "mean_sigma", "mean_D", "mean_L",
                    "score", "kept", "discard_reasons"], rows)
    if not args.report and not args.csv:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print("kept %d of %d scenes" % (len(payload["kept"]),
                                        len(payload["scenes"])))
    return EXIT_OK


def cmd_flow(args):
    defaults = {"a": None, "b": None, "out": None, "levels": 4, "window": 7,
                "iterations": 3, "smoothing": 1.0,
                "jobs": _jobs_default(), "seed": None}
    cfg = _resolve_config(args, defaults)
    fa = load_frame(cfg["a"])
    fb = load_frame(cfg["b"])
    flow_cfg = FlowEstimatorConfig(
        pyramid_levels=int(cfg["levels"]), window_radius=int(cfg["window"]),
        iterations=int(cfg["iterations"]), smoothing=float(cfg["smoothing"]))
    field = estimate_flow(fa, fb, flow_cfg)
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    write_flo(cfg["out"], field)
    print("wrote %s (%dx%d, %.1f%% valid)"
          % (cfg["out"], field.shape[1], field.shape[0],
             100.0 * field.valid.mean()))
    return EXIT_OK


def cmd_fuse(args):
    defaults = {"method": None, "a": None, "b": None, "out": None,
                "jobs": _jobs_default(), "seed": None}
    cfg = _resolve_config(args, defaults)
    spec = SequenceSpec(bit_depth="8")
    src_a = load_sequence(cfg["a"], spec, role="source-A")
    src_b = load_sequence(cfg["b"], spec, role="source-B")
    fuser = {"max": fuse_max, "mean": fuse_mean}[cfg["method"]]
    save_sequence(fuser(src_a, src_b), cfg["out"])
    if args.report:
        _write_json(args.report, _run_record(cfg, [cfg["out"]],
                                             {"frames": len(src_a)}))
    return EXIT_OK


def cmd_evaluate(args):
    defaults = {"fused": None, "src_a": None, "src_b": None, "task": "ivf",
                "flows": "internal", "method": "unnamed",
                "agg_vif": AGGREGATION_DEFAULTS["vif"],
                "agg_mi": AGGREGATION_DEFAULTS["mi"],
                "agg_ssim": AGGREGATION_DEFAULTS["ssim"],
                "jobs": _jobs_default(), "seed": None}
    cfg = _resolve_config(args, defaults)
    spec = SequenceSpec(bit_depth="8")
    fused = load_sequence(cfg["fused"], spec, role="fused")
    src_a = load_sequence(cfg["src_a"], spec, role="source-A")
    src_b = load_sequence(cfg["src_b"], spec, role="source-B")
    if cfg["flows"] == "internal":
        provider = InternalFlowProvider(
            {"fused": fused, "src-a": src_a, "src-b": src_b})
    else:
        flo_root = Path(cfg["flows"])
        if not flo_root.is_dir():
            raise FrameIOError("flow directory %s does not exist" % flo_root)
        provider = FloDirectoryProvider(flo_root)
    agg = {"vif": cfg["agg_vif"], "mi": cfg["agg_mi"],
           "ssim": cfg["agg_ssim"]}
    report = evaluate_sequences(
        fused, src_a, src_b, task=cfg["task"], provider=provider,
        aggregation=agg,
        map_fn=lambda fn, it: _parallel_map(fn, it, cfg["jobs"]))
    payload = report.to_dict()
    payload["method"] = cfg["method"]
    payload["config"] = cfg
    if args.report:
        _write_json(args.report, payload)
    if args.csv:
        _write_csv(args.csv, ("frame",) + CSV_METRIC_ORDER,
                   _metric_rows(payload))
    summary = payload["summary"]
    print("  ".join("%s=%s" % (k, _fmt(summary[k.lower()]))
                    for k in CSV_METRIC_ORDER))
    return EXIT_OK


def _metric_rows(payload):
    triples = {r["frame"]: r for r in payload["per_triple"]}
    rows = []
    for rec in payload["per_frame"]:
        t = rec["frame"]
        tri = triples.get(t, {})
        rows.append([t, _fmt(rec["vif"]), _fmt(rec["ssim"]),
                     _fmt(rec["mi"]), _fmt(rec["qabf"]),
                     _fmt(tri.get("biswe")), _fmt(tri.get("ms2r"))])
    s = payload["summary"]
    rows.append(["mean", _fmt(s["vif"]), _fmt(s["ssim"]), _fmt(s["mi"]),
                 _fmt(s["qabf"]), _fmt(s["biswe"]), _fmt(s["ms2r"])])
    return rows


def report_merge(reports):
    """Combine evaluate payloads into one table: a row per (method, task).

    Duplicate (method, task) keys are an error; rows sort by method then
    task, with the six metric columns in the standard order.
    """
    rows = {}
    for rep in reports:
        method = rep.get("method", "unnamed")
        task = rep.get("task", "")
        key = (method, task)
        if key in rows:
            raise ContractError("duplicate method key %r for task %r"
                                % (method, task))
        summary = rep.get("summary", {})
        rows[key] = {"method": method, "task": task,
                     **{m.lower(): summary.get(m.lower())
                        for m in CSV_METRIC_ORDER}}
    ordered = [rows[k] for k in sorted(rows)]
    return {"rows": ordered,
            "columns": ["method", "task"] + [m for m in CSV_METRIC_ORDER]}


def cmd_merge(args):
    defaults = {"jobs": _jobs_default(), "seed": None}
    _resolve_config(args, defaults)
    reports = []
    for path in args.inputs:
        p = Path(path)
        if not p.is_file():
            raise FrameIOError("report %s does not exist" % p)
        try:
            reports.append(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise StructuralError("report %s is not valid JSON: %s"
                                  % (p, exc))
    merged = report_merge(reports)
    if args.report:
        _write_json(args.report, merged)
    if args.csv:
        rows = [[r["method"], r["task"]]
                + [_fmt(r[m.lower()]) for m in CSV_METRIC_ORDER]
                for r in merged["rows"]]
        _write_csv(args.csv, merged["columns"], rows)
    if not args.report and not args.csv:
        print(json.dumps(merged, indent=2, sort_keys=True))
    return EXIT_OK


HANDLERS = {
    "gen-mef": cmd_gen_mef,
    "gen-mff": cmd_gen_mff,
    "screen": cmd_screen,
    "flow": cmd_flow,
    "fuse": cmd_fuse,
    "evaluate": cmd_evaluate,
    "merge": cmd_merge,
}


def dispatch(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.subcommand:
        parser.print_usage(sys.stderr)
        raise ContractError("a subcommand is required")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        raise ContractError("--jobs must be >= 1")
    return HANDLERS[args.subcommand](args)


def main(argv=None):
    try:
        return dispatch(sys.argv[1:] if argv is None else list(argv))
    except FrameIOError as exc:
        print("fusebench: i/o error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except FusebenchError as exc:
        print("fusebench: error: %s" % exc, file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
