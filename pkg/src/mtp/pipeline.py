"""End-to-end tracking + prediction runs and their on-disk logs."""

from __future__ import annotations

import json
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Box3D
from .prediction import (ConstantVelocityPredictor, PredictionSet, Predictor, TrajectorySample,
                         kmeanspp_sample, pool_predictions, sample_seed)
from .scenario import Scenario
from .tracker import Hypothesis, PipelineConfig, Tracklet, initial_hypothesis, step_multi, step_single

MODES = ("stp", "mtp", "gt")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MTP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class FrameOutput:
    frame: int
    hypotheses: list[Hypothesis]
    predictions: PredictionSet
    sampled: PredictionSet | None = None


@dataclass
class RunResult:
    cfg: PipelineConfig
    mode: str
    frames: list[FrameOutput] = field(default_factory=list)
    tracking_ms: list[float] = field(default_factory=list)
    prediction_ms: list[float] = field(default_factory=list)
    pooling_ms: list[float] = field(default_factory=list)
    sampling_ms: list[float] = field(default_factory=list)

    @property
    def final_hypotheses(self) -> list[Hypothesis]:
        return self.frames[-1].hypotheses if self.frames else []

    def predictions(self, sampled: bool = False) -> dict[int, PredictionSet]:
        if sampled:
            return {fo.frame: fo.sampled for fo in self.frames if fo.sampled is not None}
        return {fo.frame: fo.predictions for fo in self.frames}

    def lineage_boxes(self, rank: int = 0) -> list[dict[int, Box3D]]:
        """Reported boxes per frame along the history of final hypothesis ``rank``."""
        n = len(self.frames)
        if self.mode == "gt" or not self.frames:
            return [{} for _ in range(n)]
        return lineage_boxes(self.final_hypotheses[rank], n)


def lineage_boxes(hyp: Hypothesis, n_frames: int) -> list[dict[int, Box3D]]:
    out: list[dict[int, Box3D]] = [{} for _ in range(n_frames)]
    for trk in hyp.tracklets:
        for node in trk.nodes():
            if node.reported:
                out[node.frame][trk.track_id] = node.state.box
    return out


class _PredictionCache:
    """Samples per distinct tracklet history within one frame."""

    def __init__(self, cfg: PipelineConfig, predictor: Predictor, workers: int):
        self.cfg = cfg
        self.predictor = predictor
        self.workers = workers

    def _one(self, trk: Tracklet) -> np.ndarray:
        cfg = self.cfg
        past = trk.positions(last=cfg.past_len)
        seed = sample_seed(cfg.rng_seed, trk.track_id, trk.signature)
        if isinstance(self.predictor, ConstantVelocityPredictor):
            return self.predictor.predict(past, cfg.horizon, cfg.n_samples, seed,
                                          velocity=np.array(trk.state.velocity))
        return self.predictor.predict(past, cfg.horizon, cfg.n_samples, seed)

    def run(self, hyps: Sequence[Hypothesis]) -> dict[tuple[int, int], list[np.ndarray]]:
        jobs: dict[tuple[int, int], Tracklet] = {}
        for h in hyps:
            for t in h.reported_tracklets():
                jobs.setdefault((t.track_id, t.signature), t)
        keys = list(jobs)
        if self.workers > 1 and len(keys) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                arrays = list(pool.map(self._one, [jobs[k] for k in keys]))
        else:
            arrays = [self._one(jobs[k]) for k in keys]
        shape = (self.cfg.n_samples, self.cfg.horizon, 2)
        for a in arrays:
            if a.shape != shape:
                raise ValueError(f"predictor returned shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError("predictor returned non-finite waypoints")
            a.setflags(write=False)
        return {k: list(a) for k, a in zip(keys, arrays)}


def object_key(detection_id: int) -> str:
    return f"det:{detection_id}"


def predict_hypotheses(hyps: Sequence[Hypothesis], det_boxes: dict[int, Box3D], frame: int,
                       cache: dict[tuple[int, int], list[np.ndarray]]) -> list[PredictionSet]:
    out = []
    for h in hyps:
        pset = PredictionSet(frame)
        for t in h.reported_tracklets():
            det_id = t.head.detection_id
            key = object_key(det_id)
            rows = cache[(t.track_id, t.signature)]
            pset.add(key, TrajectorySample._trusted(key, rows, h.hypothesis_id), det_boxes[det_id])
        out.append(pset)
    return out


def pooled_predictions(hyps: Sequence[Hypothesis], detections, frame: int, cfg: PipelineConfig,
                       predictor: Predictor | None = None) -> PredictionSet:
    """Predict every reported tracklet of every hypothesis and pool per object."""
    if predictor is None:
        predictor = ConstantVelocityPredictor(cfg.sigma_speed, cfg.sigma_heading)
    cache = _PredictionCache(cfg, predictor, 1).run(hyps)
    det_boxes = {d.detection_id: d.box for d in detections}
    return pool_predictions(predict_hypotheses(hyps, det_boxes, frame, cache))


def predict_from_gt(scenario: Scenario, frame: int, cfg: PipelineConfig,
                    predictor: Predictor) -> PredictionSet:
    """Predictions fed with ground-truth past trajectories (the idealized input)."""
    pset = PredictionSet(frame)
    for g in scenario.gt:
        box = g.box_at(frame)
        if box is None:
            continue
        past = []
        for f in range(frame, frame - cfg.past_len, -1):
            b = g.box_at(f)
            if b is None:
                break
            past.append((b.cx, b.cy))
        past.reverse()
        seed = sample_seed(cfg.rng_seed, g.gt_id, frame)
        arr = predictor.predict(np.array(past), cfg.horizon, cfg.n_samples, seed)
        key = f"gt:{g.gt_id}"
        pset.add(key, TrajectorySample.batch(key, arr), box)
    return pset


def sample_predictions(pooled: PredictionSet, k_out: int, rng_seed: int) -> PredictionSet:
    out = PredictionSet(pooled.frame)
    for key, samples in pooled.samples.items():
        seed = sample_seed(rng_seed, pooled.frame, zlib.crc32(key.encode()))
        out.add(key, kmeanspp_sample(samples, k_out, seed), pooled.anchors.get(key))
    return out


def run_pipeline(scenario: Scenario, cfg: PipelineConfig, mode: str = "mtp", *,
                 sampling: bool = False, predictor: Predictor | None = None,
                 workers: int | None = None) -> RunResult:
    """Track (single- or multi-hypothesis) and predict at every frame.

    ``mode="stp"`` uses the dedicated single-hypothesis path, ``"mtp"`` the
    multi-hypothesis one, and ``"gt"`` skips tracking and predicts from
    ground-truth past trajectories.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if predictor is None:
        predictor = ConstantVelocityPredictor(cfg.sigma_speed, cfg.sigma_heading)
    workers = default_workers() if workers is None else workers
    result = RunResult(cfg, mode)
    hyps = [initial_hypothesis()]
    for frame, dets in enumerate(scenario.detections):
        t0 = time.perf_counter()
        if mode == "stp":
            hyps = [step_single(hyps[0], dets, cfg, frame=frame)]
        elif mode == "mtp":
            hyps = step_multi(hyps, dets, cfg, frame=frame)
        t1 = time.perf_counter()
        if mode == "gt":
            pooled = predict_from_gt(scenario, frame, cfg, predictor)
            hyps = []
            t2 = time.perf_counter()
        else:
            cache = _PredictionCache(cfg, predictor, workers).run(hyps)
            t2 = time.perf_counter()
            det_boxes = {d.detection_id: d.box for d in dets}
            per_hyp = predict_hypotheses(hyps, det_boxes, frame, cache)
            pooled = per_hyp[0] if mode == "stp" else pool_predictions(per_hyp)
        t3 = time.perf_counter()
        sampled = sample_predictions(pooled, cfg.n_samples, cfg.rng_seed) if sampling else None
        t4 = time.perf_counter()
        result.frames.append(FrameOutput(frame, hyps, pooled, sampled))
        result.tracking_ms.append(1e3 * (t1 - t0))
        result.prediction_ms.append(1e3 * (t2 - t1))
        result.pooling_ms.append(1e3 * (t3 - t2))
        result.sampling_ms.append(1e3 * (t4 - t3))
    return result


# -------------------------------------------------------------------- logs


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def track_log_lines(result: RunResult) -> list[str]:
    lines = []
    for fo in result.frames:
        for h in fo.hypotheses:
            tracks = [{"id": t.track_id, "det": t.head.detection_id, "status": t.status,
                       "reported": t.reported, "box": t.state.box.as_list()}
                      for t in sorted(h.live, key=lambda t: t.track_id)]
            lines.append(_dumps({"frame": fo.frame, "hypothesis": h.hypothesis_id,
                                 "parent": h.parent_id, "cost": h.cumulative_cost,
                                 "tracks": tracks}))
    return lines


def lineage_log_lines(result: RunResult) -> list[str]:
    lines = []
    n = len(result.frames)
    for h in result.final_hypotheses:
        boxes = lineage_boxes(h, n)
        for f in range(n):
            lines.append(_dumps({"hypothesis": h.hypothesis_id, "frame": f,
                                 "tracks": [[tid, boxes[f][tid].as_list()] for tid in sorted(boxes[f])]}))
    return lines


def prediction_log_lines(psets: dict[int, PredictionSet]) -> list[str]:
    lines = []
    for frame in sorted(psets):
        p = psets[frame]
        for key, samples in p.samples.items():
            anchor = p.anchors.get(key)
            lines.append(_dumps({"frame": frame, "object": key,
                                 "anchor": anchor.as_list() if anchor else None,
                                 "sources": [s.source_hypothesis for s in samples],
                                 "samples": [s.waypoints.tolist() for s in samples]}))
    return lines


def read_predictions(path) -> dict[int, PredictionSet]:
    out: dict[int, PredictionSet] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        rec = json.loads(line)
        frame = rec["frame"]
        pset = out.setdefault(frame, PredictionSet(frame))
        key = rec["object"]
        samples = [TrajectorySample(key, np.array(w), src)
                   for w, src in zip(rec["samples"], rec["sources"])]
        anchor = Box3D.from_list(rec["anchor"]) if rec["anchor"] is not None else None
        pset.add(key, samples, anchor)
    return out


def read_lineages(path, n_frames: int) -> list[list[dict[int, Box3D]]]:
    """Per final hypothesis, per frame, reported boxes by track id."""
    out: dict[int, list[dict[int, Box3D]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        rec = json.loads(line)
        frames = out.setdefault(rec["hypothesis"], [{} for _ in range(n_frames)])
        frames[rec["frame"]] = {tid: Box3D.from_list(b) for tid, b in rec["tracks"]}
    return [out[k] for k in sorted(out)]
