"""``mtp`` command line: synth, run, eval, bench.

Exit codes: 0 success, 2 usage error, 3 data error (unreadable or
malformed inputs, stale run outputs).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .evaluation import classify_errors, evaluate, pair_sequence, reports_csv
from .experiments import bench_scenario, benchmark
from .pipeline import (lineage_log_lines, prediction_log_lines, read_lineages, read_predictions,
                       run_pipeline, track_log_lines)
from .scenario import (ClutterParams, CrossingParams, LaneParams, PRESETS, ScenarioFormatError,
                       dumps_scenario, load_scenario, synth_clutter, synth_crossing, synth_dropout)
from .tracker import MATCHING_MODES, PipelineConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
MANIFEST = "manifest.json"


class DataError(Exception):
    """Input files are missing, malformed or inconsistent."""


# ------------------------------------------------------------ helpers


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"must be a finite value >= 0, got {text}")
    return v


def _pos_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v) or v <= 0:
        raise argparse.ArgumentTypeError(f"must be a finite value > 0, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be >= 1")
    return values


def _window(text: str) -> tuple[int, int, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected AGENT:FIRST:LAST, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def git_blob_hash(data: bytes) -> str:
    """Content hash computed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _file_hash(path: Path) -> str:
    return git_blob_hash(path.read_bytes())


def _write(path: Path, lines: list[str]) -> str:
    data = "".join(line + "\n" for line in lines).encode("utf-8")
    path.write_bytes(data)
    return git_blob_hash(data)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _load_scenario(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (ScenarioFormatError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


# -------------------------------------------------------------- synth


def _synth_one(args, seed: int):
    crossing = CrossingParams(speed=args.speed, half_angle=math.radians(args.angle),
                              frames=args.frames, sigma=args.sigma, fps=args.fps)
    lanes = LaneParams(n_agents=args.agents, frames=args.frames, speed=args.speed,
                       sigma=args.sigma, drop_prob=args.drop_prob,
                       drop_windows=tuple(args.drop_window), fps=args.fps)
    if args.kind == "crossing":
        return synth_crossing(crossing, seed)
    if args.kind == "dropout":
        return synth_dropout(lanes, seed)
    base = crossing if args.clutter_base == "crossing" else lanes
    return synth_clutter(ClutterParams(rate=args.rate, persistence=args.persistence,
                                       frames=args.frames, fps=args.fps, base=base), seed)


def cmd_synth(args) -> int:
    if args.kind == "dropout" and args.drop_prob > 1:
        raise ValueError("--drop-prob must be in [0, 1]")
    out = Path(args.out)
    seeds = list(range(args.seed, args.seed + args.count))
    try:
        scenarios = [_synth_one(args, s) for s in seeds]
    except ValueError as exc:
        raise ValueError(f"invalid generator flags for --kind {args.kind}: {exc}") from None
    files = {}
    if args.count == 1:
        out.parent.mkdir(parents=True, exist_ok=True)
        targets = [out]
        manifest_path = out.with_name(out.name + ".manifest.json")
    else:
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / f"{args.kind}_{s:04d}.jsonl" for s in seeds]
        manifest_path = out / MANIFEST
    for sc, path in zip(scenarios, targets):
        data = dumps_scenario(sc).encode("utf-8")
        path.write_bytes(data)
        files[path.name] = {"seed": sc.seed, "hash": git_blob_hash(data)}
    manifest = {"command": "synth", "kind": args.kind, "version": __version__,
                "params": scenarios[0].params if scenarios else {}, "files": files}
    manifest_path.write_text(_dump_json(manifest), encoding="utf-8")
    print(f"wrote {len(targets)} scenario(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- run


def _config_from_args(args) -> PipelineConfig:
    base = PipelineConfig.from_preset(args.preset) if args.preset else PipelineConfig()
    overrides = {"n_hypotheses": args.hypotheses, "n_samples": args.samples,
                 "children_per_parent": args.children_per_parent, "matching_mode": args.matching,
                 "gate_threshold": args.gate, "past_len": args.past_len, "horizon": args.horizon,
                 "rng_seed": args.seed}
    return replace(base, **{k: v for k, v in overrides.items() if v is not None})


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    scenario_path = Path(args.scenario)
    sc = _load_scenario(args.scenario)
    if args.gt_past:
        mode = "gt"
    else:
        mode = "stp" if cfg.n_hypotheses == 1 and not args.force_mtp else "mtp"
    sampling = args.sampling == "on"
    result = run_pipeline(sc, cfg, mode, sampling=sampling, workers=args.workers)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {
        "tracks.jsonl": _write(out / "tracks.jsonl", track_log_lines(result)),
        "lineage.jsonl": _write(out / "lineage.jsonl", lineage_log_lines(result)),
        "predictions.jsonl": _write(out / "predictions.jsonl",
                                    prediction_log_lines(result.predictions())),
    }
    if sampling:
        outputs["predictions_sampled.jsonl"] = _write(
            out / "predictions_sampled.jsonl", prediction_log_lines(result.predictions(sampled=True)))
    n = max(1, len(result.frames))
    manifest = {
        "command": "run", "version": __version__, "mode": mode, "sampling": sampling,
        "predictor": args.predictor, "config": cfg.to_dict(),
        "scenario": {"path": str(scenario_path), "name": sc.name, "seed": sc.seed,
                     "frames": sc.frames, "hash": _file_hash(scenario_path)},
        "outputs": outputs,
        "timing": {"tracking_ms_per_frame": sum(result.tracking_ms) / n,
                   "prediction_ms_per_frame": sum(result.prediction_ms) / n,
                   "pooling_ms_per_frame": sum(result.pooling_ms) / n,
                   "sampling_ms_per_frame": sum(result.sampling_ms) / n},
    }
    (out / MANIFEST).write_text(_dump_json(manifest), encoding="utf-8")
    print(f"{mode}: {len(result.frames)} frames -> {out}")
    return EXIT_OK


# --------------------------------------------------------------- eval


def _load_run(run_dir: Path, scenario_hash: str) -> dict:
    try:
        manifest = json.loads((run_dir / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{run_dir}: no {MANIFEST}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{run_dir / MANIFEST}: {exc}") from None
    if manifest.get("scenario", {}).get("hash") != scenario_hash:
        raise DataError(f"{run_dir}: manifest scenario hash does not match the given scenario "
                        "(stale run outputs)")
    for name, expected in manifest.get("outputs", {}).items():
        path = run_dir / name
        if not path.exists() or _file_hash(path) != expected:
            raise DataError(f"{path}: content hash does not match {MANIFEST} (stale or edited output)")
    manifest["_hash"] = _file_hash(run_dir / MANIFEST)
    return manifest


def _run_events(run_dir: Path, manifest: dict, sc, cfg: PipelineConfig):
    """Error events of every final hypothesis (hypothesis 0 first)."""
    if manifest["mode"] == "gt":
        return []
    mode, gate = cfg.matching_mode, cfg.gate_threshold
    return [classify_errors(pair_sequence(boxes, sc.gt, mode, gate), mode, gate)
            for boxes in read_lineages(run_dir / "lineage.jsonl", sc.frames)]


def cmd_eval(args) -> int:
    scenario_path = Path(args.scenario)
    sc = _load_scenario(args.scenario)
    scenario_hash = _file_hash(scenario_path)
    runs = [Path(r) for r in args.run]
    manifests = [_load_run(r, scenario_hash) for r in runs]
    configs = [PipelineConfig(**m["config"]) for m in manifests]
    events = [_run_events(r, m, sc, c) for r, m, c in zip(runs, manifests, configs)]

    if args.baseline is not None:
        base_dir = Path(args.baseline)
        base_manifest = _load_run(base_dir, scenario_hash)
        base_events = _run_events(base_dir, base_manifest, sc, PipelineConfig(**base_manifest["config"]))
    else:
        base_dir, base_manifest, base_events = runs[0], manifests[0], events[0]
    if not base_events:
        raise DataError(f"{base_dir}: a ground-truth-input run cannot define the targeted subsets")
    subset_events = base_events[0]

    reports = []
    for run_dir, manifest, cfg, ev, label in zip(runs, manifests, configs, events,
                                                 args.label or [None] * len(runs)):
        name = "predictions_sampled.jsonl" if args.sampled and manifest["sampling"] else "predictions.jsonl"
        preds = read_predictions(run_dir / name)
        if label is None:
            label = {"gt": "GT-past", "stp": "STP"}.get(manifest["mode"], f"MTP H={cfg.n_hypotheses}")
            if name == "predictions_sampled.jsonl":
                label += " sampled"
        rep = evaluate(preds, sc.gt, ev[0] if ev else [], cfg,
                       hypothesis_events=ev if len(ev) > 1 else None,
                       subset_events=subset_events, label=label)
        reports.append({"run": str(run_dir), "manifest_hash": manifest["_hash"], "report": rep})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"scenario": {"path": str(scenario_path), "hash": scenario_hash},
           "baseline": {"run": str(base_dir), "manifest_hash": base_manifest["_hash"]},
           "reports": [{"run": r["run"], "manifest_hash": r["manifest_hash"], **r["report"].to_dict()}
                       for r in reports]}
    (out / "report.json").write_text(_dump_json(doc), encoding="utf-8")
    (out / "report.csv").write_text(reports_csv([r["report"] for r in reports]), encoding="utf-8")
    sys.stdout.write(reports_csv([r["report"] for r in reports]))
    return EXIT_OK


# -------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise argparse.ArgumentTypeError("--repeats must be >= 1")
    sc = _load_scenario(args.scenario) if args.scenario else bench_scenario(args.seed)
    cfg = PipelineConfig.from_preset(args.preset) if args.preset else PipelineConfig()
    rows = benchmark(sc, cfg, args.hypotheses, repeats=args.repeats, workers=args.workers)
    doc = {"scenario": args.scenario or f"builtin bench scenario (seed {args.seed})",
           "frames": sc.frames, "repeats": args.repeats, "rows": [r.to_dict() for r in rows]}
    text = _dump_json(doc)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtp", description="Multi-hypothesis tracking and prediction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic scenarios")
    s.add_argument("--kind", required=True, choices=["crossing", "dropout", "clutter"])
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--out", required=True, help="file (count 1) or directory")
    s.add_argument("--count", type=_pos_int, default=1, help="seeds SEED..SEED+COUNT-1")
    s.add_argument("--frames", type=_pos_int, default=40)
    s.add_argument("--fps", type=_pos_float, default=10.0)
    s.add_argument("--sigma", type=_nonneg_float, default=0.3, help="detection noise (m)")
    s.add_argument("--speed", type=_pos_float, default=0.5, help="m/frame")
    s.add_argument("--angle", type=float, default=10.0, help="crossing half-angle (deg)")
    s.add_argument("--agents", type=_pos_int, default=2)
    s.add_argument("--drop-prob", type=_nonneg_float, default=0.0)
    s.add_argument("--drop-window", type=_window, action="append", default=[],
                   metavar="AGENT:FIRST:LAST")
    s.add_argument("--rate", type=_nonneg_float, default=1.0, help="clutter births per frame")
    s.add_argument("--persistence", type=_pos_int, default=3)
    s.add_argument("--clutter-base", choices=["none", "crossing", "lanes"], default="none")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="track and predict on one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--preset", choices=sorted(PRESETS))
    r.add_argument("--hypotheses", type=_pos_int)
    r.add_argument("--samples", type=_pos_int)
    r.add_argument("--children-per-parent", type=_pos_int)
    r.add_argument("--matching", choices=MATCHING_MODES)
    r.add_argument("--gate", type=_pos_float)
    r.add_argument("--past-len", type=_pos_int)
    r.add_argument("--horizon", type=_pos_int)
    r.add_argument("--sampling", choices=["on", "off"], default="off")
    r.add_argument("--predictor", choices=["cv"], default="cv")
    r.add_argument("--seed", type=_nonneg_int)
    r.add_argument("--gt-past", action="store_true", help="predict from ground-truth past trajectories")
    r.add_argument("--force-mtp", action="store_true",
                   help="use the multi-hypothesis code path even with one hypothesis")
    r.add_argument("--workers", type=_pos_int, help="prediction threads (default: MTP_THREADS or 1)")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score one or more runs against scenario GT")
    e.add_argument("--scenario", required=True)
    e.add_argument("--run", required=True, action="append", help="run directory (repeatable)")
    e.add_argument("--label", action="append", help="report label per --run")
    e.add_argument("--baseline", help="run whose hypothesis-0 errors define the targeted subsets "
                                      "(default: the first --run)")
    e.add_argument("--sampled", action="store_true", help="score post-sampling predictions when present")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time tracking and prediction per H")
    b.add_argument("--scenario", help="scenario file (default: built-in 100-frame, 20-agent scene)")
    b.add_argument("--seed", type=_nonneg_int, default=0)
    b.add_argument("--hypotheses", type=_int_list, default=[1, 5, 10, 20])
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--preset", choices=sorted(PRESETS))
    b.add_argument("--workers", type=_pos_int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and args.label and len(args.label) != len(args.run):
        parser.error("--label must be given once per --run")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except (DataError, ScenarioFormatError, OSError) as exc:
        print(f"mtp: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"mtp: error: {exc}", file=sys.stderr)
        return EXIT_DATA if args.command in ("run", "eval") else EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
