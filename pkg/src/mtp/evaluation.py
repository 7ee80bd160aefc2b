"""Tracking-error classification and best-of-k prediction metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .assignment import hungarian
from .geometry import Box3D, center_distance_2d, iou3d
from .prediction import PredictionSet, TrajectorySample
from .scenario import GtTrajectory
from .tracker import PipelineConfig, cost_matrix_from_boxes

IDS = "IDS"
FRAG_WRONG = "FRAG_wrong"
FRAG_UNDER = "FRAG_under"
SPURIOUS = "SPURIOUS"
ERROR_KINDS = (IDS, FRAG_WRONG, FRAG_UNDER, SPURIOUS)
SUBSETS = ("all", "IDS", "FRAG")
EGO_BIN_WIDTH = 5.0


@dataclass(frozen=True)
class FramePairing:
    frame: int
    matches: tuple[tuple[int, int], ...]  # (gt_id, track_id)
    unmatched_gt: tuple[int, ...]
    unmatched_tracks: tuple[int, ...]
    gt_boxes: Mapping[int, Box3D] = field(default_factory=dict, compare=False)
    track_boxes: Mapping[int, Box3D] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ErrorEvent:
    kind: str
    frame: int
    gt_id: int | None
    track_ids: tuple[int, ...]
    ego_distance: float

    def __post_init__(self) -> None:
        if self.kind not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.kind!r}")
        if self.kind == IDS and len(set(self.track_ids)) < 2:
            raise ValueError("an IDS event needs two distinct track ids")

    @property
    def key(self) -> tuple:
        """Identity of the event independent of track numbering."""
        return (self.kind, self.frame, self.gt_id)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "frame": self.frame, "gt_id": self.gt_id,
                "track_ids": list(self.track_ids), "ego_distance": self.ego_distance}


def match_frame(tracked: Mapping[int, Box3D], gt: Mapping[int, Box3D], mode: str,
                threshold: float, frame: int = 0) -> FramePairing:
    """Gated Hungarian pairing of GT boxes (rows) with tracked boxes (columns)."""
    gt_ids = sorted(gt)
    track_ids = sorted(tracked)
    cm = cost_matrix_from_boxes([gt[g] for g in gt_ids], [tracked[t] for t in track_ids],
                                mode, threshold)
    a = hungarian(cm)
    return FramePairing(
        frame=frame,
        matches=tuple((gt_ids[r], track_ids[c]) for r, c in a.matches),
        unmatched_gt=tuple(gt_ids[r] for r in a.unmatched_rows),
        unmatched_tracks=tuple(track_ids[c] for c in a.unmatched_cols),
        gt_boxes=dict(gt),
        track_boxes=dict(tracked),
    )


def _near(a: Box3D, b: Box3D, mode: str, threshold: float) -> bool:
    """Within twice the gate: distance <= 2*gate, or IoU >= gate/2."""
    if mode == "center2d":
        return center_distance_2d(a, b) <= 2.0 * threshold
    return iou3d(a, b) >= 0.5 * threshold


def _ego(box: Box3D) -> float:
    return math.hypot(box.cx, box.cy)


def classify_errors(pairings: Sequence[FramePairing], mode: str = "center2d",
                    threshold: float = 2.0) -> list[ErrorEvent]:
    """Identity switches, fragments and spurious tracks over a sequence.

    A fragment is *wrongly tracked* when some reported track lies within
    twice the gate of the unmatched GT, otherwise *under tracked*.
    """
    ordered = sorted(pairings, key=lambda p: p.frame)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.frame != prev.frame + 1:
            raise ValueError(f"pairings skip from frame {prev.frame} to {cur.frame}")
    last: dict[int, int] = {}
    events: list[ErrorEvent] = []
    for p in ordered:
        for gt_id, track_id in p.matches:
            prev = last.get(gt_id)
            if prev is not None and prev != track_id:
                events.append(ErrorEvent(IDS, p.frame, gt_id, (prev, track_id),
                                         _ego(p.gt_boxes[gt_id])))
            last[gt_id] = track_id
        for gt_id in p.unmatched_gt:
            if gt_id not in last:
                continue
            box = p.gt_boxes[gt_id]
            near = tuple(t for t in sorted(p.track_boxes)
                         if _near(box, p.track_boxes[t], mode, threshold))
            kind = FRAG_WRONG if near else FRAG_UNDER
            events.append(ErrorEvent(kind, p.frame, gt_id, near, _ego(box)))
        for track_id in p.unmatched_tracks:
            events.append(ErrorEvent(SPURIOUS, p.frame, None, (track_id,),
                                     _ego(p.track_boxes[track_id])))
    return events


def pair_sequence(track_boxes: Sequence[Mapping[int, Box3D]], gt: Sequence[GtTrajectory],
                  mode: str, threshold: float) -> list[FramePairing]:
    """Frame-by-frame pairing; ``track_boxes[f]`` holds the reported boxes of frame ``f``."""
    out = []
    for f, tracked in enumerate(track_boxes):
        gt_boxes = {}
        for g in gt:
            box = g.box_at(f)
            if box is not None:
                gt_boxes[g.gt_id] = box
        out.append(match_frame(tracked, gt_boxes, mode, threshold, frame=f))
    return out


# ---------------------------------------------------------------- metrics


def _as_array(pred_samples) -> np.ndarray:
    if isinstance(pred_samples, np.ndarray):
        arr = pred_samples
    else:
        arr = np.stack([s.waypoints if isinstance(s, TrajectorySample) else np.asarray(s, float)
                        for s in pred_samples]) if len(pred_samples) else np.empty((0, 0, 2))
    if arr.ndim != 3 or len(arr) == 0:
        raise ValueError("need a non-empty list of (horizon, 2) samples")
    return arr


def min_ade(pred_samples, gt_future) -> float:
    """Best-of-k mean Euclidean displacement over the horizon."""
    arr = _as_array(pred_samples)
    gt_future = np.asarray(gt_future, dtype=float)
    if arr.shape[1:] != gt_future.shape:
        raise ValueError(f"sample shape {arr.shape[1:]} != gt shape {gt_future.shape}")
    return float(np.min(np.mean(np.linalg.norm(arr - gt_future, axis=2), axis=1)))


def min_fde(pred_samples, gt_future) -> float:
    """Best-of-k Euclidean displacement at the final waypoint."""
    arr = _as_array(pred_samples)
    gt_future = np.asarray(gt_future, dtype=float)
    if arr.shape[1:] != gt_future.shape:
        raise ValueError(f"sample shape {arr.shape[1:]} != gt shape {gt_future.shape}")
    return float(np.min(np.linalg.norm(arr[:, -1] - gt_future[-1], axis=1)))


# ----------------------------------------------------------------- report


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


@dataclass
class MetricsReport:
    subsets: dict[str, dict] = field(default_factory=dict)
    error_counts: dict[str, int] = field(default_factory=dict)
    frequency: dict[str, dict[str, int]] = field(default_factory=dict)
    ego_histogram: dict = field(default_factory=dict)
    spurious_predictions: int = 0
    truncated: int = 0
    instances: list[dict] = field(default_factory=list)
    shared_errors: dict | None = None
    label: str = ""

    def metric(self, subset: str, name: str = "minade") -> float | None:
        return self.subsets[subset][name]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "subsets": self.subsets,
            "error_counts": self.error_counts,
            "frequency": self.frequency,
            "ego_histogram": self.ego_histogram,
            "spurious_predictions": self.spurious_predictions,
            "truncated": self.truncated,
            "instances": self.instances,
            "shared_errors": self.shared_errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _in_window(event_frames: Iterable[int], frame: int, past_len: int) -> bool:
    return any(frame - past_len < f <= frame for f in event_frames)


def shared_error_stats(hypothesis_events: Sequence[Sequence[ErrorEvent]]) -> dict:
    """IDS/FRAG events present in every hypothesis versus those of hypothesis 0."""
    keyed = [{e.key for e in events if e.kind != SPURIOUS} for events in hypothesis_events]
    shared = set.intersection(*keyed) if keyed else set()
    first = keyed[0] if keyed else set()

    def counts(keys):
        c = Counter(k[0] for k in keys)
        out = {kind: c.get(kind, 0) for kind in (IDS, FRAG_WRONG, FRAG_UNDER)}
        out["FRAG"] = out[FRAG_WRONG] + out[FRAG_UNDER]
        return out

    def per_frame(keys):
        c: dict[int, dict[str, int]] = defaultdict(lambda: {"IDS": 0, "FRAG": 0})
        for kind, frame, _ in keys:
            c[frame]["IDS" if kind == IDS else "FRAG"] += 1
        return {str(f): c[f] for f in sorted(c)}

    return {"hypotheses": len(keyed), "hypothesis0": counts(first), "shared": counts(shared),
            "hypothesis0_per_frame": per_frame(first), "shared_per_frame": per_frame(shared)}


def evaluate(predictions: Mapping[int, PredictionSet], gt: Sequence[GtTrajectory],
             error_events: Sequence[ErrorEvent], cfg: PipelineConfig, *,
             hypothesis_events: Sequence[Sequence[ErrorEvent]] | None = None,
             subset_events: Sequence[ErrorEvent] | None = None,
             label: str = "") -> MetricsReport:
    """Global and targeted best-of-k metrics plus error statistics.

    Each prediction object is paired with GT at its prediction frame using
    the tracking gates.  Targeted subsets hold the instances whose GT had an
    IDS (resp. FRAG) event within the ``past_len`` frames ending at the
    prediction frame.  Objects without a GT partner count as spurious
    predictions; GT futures shorter than the horizon are skipped and tallied.
    ``subset_events`` (default: ``error_events``) selects the targeted
    subsets, so several methods can be scored on the same instances.
    """
    horizon, past_len = cfg.horizon, cfg.past_len
    gt_by_id = {g.gt_id: g for g in gt}
    ids_frames: dict[int, list[int]] = defaultdict(list)
    frag_frames: dict[int, list[int]] = defaultdict(list)
    for e in (error_events if subset_events is None else subset_events):
        if e.kind == IDS:
            ids_frames[e.gt_id].append(e.frame)
        elif e.kind in (FRAG_WRONG, FRAG_UNDER):
            frag_frames[e.gt_id].append(e.frame)

    instances = []
    spurious = truncated = 0
    missing = Counter()
    last_frame = max((g.frames[-1] for g in gt if g.frames), default=-1)
    for frame in range(0, last_frame + 1):
        pset = predictions.get(frame)
        keys = sorted(pset.samples) if pset is not None else []
        anchors = {i: pset.anchors[k] for i, k in enumerate(keys)}
        gt_now = {g.gt_id: g.box_at(frame) for g in gt if g.box_at(frame) is not None}
        pairing = match_frame(anchors, gt_now, cfg.matching_mode, cfg.gate_threshold, frame)
        spurious += len(pairing.unmatched_tracks)
        future_frames = range(frame + 1, frame + horizon + 1)
        matched_gt = set()
        for gt_id, idx in pairing.matches:
            matched_gt.add(gt_id)
            future = gt_by_id[gt_id].positions(future_frames)
            if future is None:
                truncated += 1
                continue
            samples = pset.samples[keys[idx]]
            instances.append({
                "frame": frame, "gt_id": gt_id, "object_key": keys[idx],
                "minade": min_ade(samples, future), "minfde": min_fde(samples, future),
                "n_samples": len(samples),
                "IDS": _in_window(ids_frames.get(gt_id, ()), frame, past_len),
                "FRAG": _in_window(frag_frames.get(gt_id, ()), frame, past_len),
            })
        for gt_id in gt_now:
            if gt_id in matched_gt or gt_by_id[gt_id].positions(future_frames) is None:
                continue
            missing["all"] += 1
            if _in_window(ids_frames.get(gt_id, ()), frame, past_len):
                missing["IDS"] += 1
            if _in_window(frag_frames.get(gt_id, ()), frame, past_len):
                missing["FRAG"] += 1

    subsets = {}
    for name in SUBSETS:
        rows = [r for r in instances if name == "all" or r[name]]
        subsets[name] = {"minade": _mean([r["minade"] for r in rows]),
                         "minfde": _mean([r["minfde"] for r in rows]),
                         "count": len(rows), "missing": missing.get(name, 0)}

    counts = Counter(e.kind for e in error_events)
    freq: dict[str, dict[str, int]] = {str(g.gt_id): {"IDS": 0, "FRAG": 0} for g in gt}
    for e in error_events:
        if e.gt_id is not None:
            freq.setdefault(str(e.gt_id), {"IDS": 0, "FRAG": 0})
            freq[str(e.gt_id)]["IDS" if e.kind == IDS else "FRAG"] += 1
    bins = Counter(int(e.ego_distance // EGO_BIN_WIDTH) for e in error_events if e.kind != SPURIOUS)
    n_bins = max(bins) + 1 if bins else 0
    hist = {"bin_width": EGO_BIN_WIDTH,
            "edges": [i * EGO_BIN_WIDTH for i in range(n_bins + 1)],
            "counts": [bins.get(i, 0) for i in range(n_bins)]}
    return MetricsReport(
        subsets=subsets,
        error_counts={k: counts.get(k, 0) for k in ERROR_KINDS},
        frequency=freq,
        ego_histogram=hist,
        spurious_predictions=spurious,
        truncated=truncated,
        instances=instances,
        shared_errors=shared_error_stats(hypothesis_events) if hypothesis_events else None,
        label=label,
    )


def reports_csv(reports: Sequence[MetricsReport]) -> str:
    """Side-by-side table: one row per (subset, method)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subset", "method", "count", "missing", "minADE_k", "minFDE_k"])
    for subset in SUBSETS:
        for r in reports:
            s = r.subsets[subset]
            fmt = lambda v: "" if v is None else f"{v:.6f}"
            w.writerow([subset, r.label, s["count"], s["missing"], fmt(s["minade"]), fmt(s["minfde"])])
    return buf.getvalue()
