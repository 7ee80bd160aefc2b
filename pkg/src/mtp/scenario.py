"""Detection / ground-truth logs and seeded synthetic scenario generators.

Log format is line-delimited JSON.  The first record is a header::

    {"type":"header","schema":1,"name":...,"fps":...,"frames":...,"seed":...,"params":{...}}

followed by ground-truth records (sorted by ``gt_id`` then ``frame``)::

    {"type":"gt","gt_id":0,"frame":3,"label":"car","box":[cx,cy,cz,l,w,h,yaw]}

and detection records (sorted by ``frame``, in detection order)::

    {"type":"det","frame":3,"id":0,"label":"car","score":1.0,"box":[...]}

All dynamics are per frame; coordinates are meters in the ego frame with the
ego vehicle fixed at the origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .geometry import Box3D

SCHEMA_VERSION = 1
DEFAULT_DIMS = (4.0, 1.8, 1.5)


class ScenarioFormatError(ValueError):
    """Raised when a scenario log cannot be parsed."""


@dataclass(frozen=True)
class Detection:
    frame: int
    detection_id: int
    box: Box3D
    label: str = "car"
    score: float = 1.0

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise ValueError(f"frame must be >= 0, got {self.frame}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GtTrajectory:
    gt_id: int
    frames: tuple[int, ...]
    boxes: tuple[Box3D, ...]
    label: str = "car"

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.boxes):
            raise ValueError("frames and boxes differ in length")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError(f"gt {self.gt_id}: frames must be strictly increasing")

    def box_at(self, frame: int) -> Box3D | None:
        i = _bisect(self.frames, frame)
        return self.boxes[i] if i is not None else None

    def positions(self, frames: Iterable[int]) -> np.ndarray | None:
        """``(n, 2)`` xy array for ``frames``, or None if any frame is absent."""
        out = []
        for f in frames:
            box = self.box_at(f)
            if box is None:
                return None
            out.append((box.cx, box.cy))
        return np.array(out, dtype=float).reshape(-1, 2)


def _bisect(frames: tuple[int, ...], frame: int) -> int | None:
    lo, hi = 0, len(frames)
    while lo < hi:
        mid = (lo + hi) // 2
        if frames[mid] < frame:
            lo = mid + 1
        else:
            hi = mid
    if lo < len(frames) and frames[lo] == frame:
        return lo
    return None


@dataclass
class Scenario:
    name: str
    fps: float
    frames: int
    detections: list[list[Detection]]
    gt: list[GtTrajectory]
    seed: int | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.detections) != self.frames:
            raise ValueError(f"expected {self.frames} detection lists, got {len(self.detections)}")
        for f, dets in enumerate(self.detections):
            for d in dets:
                if d.frame != f:
                    raise ValueError(f"detection {d.detection_id} filed under frame {f} has frame {d.frame}")
        for g in self.gt:
            if g.frames and (g.frames[0] < 0 or g.frames[-1] >= self.frames):
                raise ValueError(f"gt {g.gt_id} frames outside [0, {self.frames})")

    def gt_by_id(self) -> dict[int, GtTrajectory]:
        return {g.gt_id: g for g in self.gt}

    def gt_boxes_at(self, frame: int) -> dict[int, Box3D]:
        out = {}
        for g in self.gt:
            box = g.box_at(frame)
            if box is not None:
                out[g.gt_id] = box
        return out


# --------------------------------------------------------------------- I/O


def _dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def scenario_lines(s: Scenario) -> list[str]:
    lines = [_dumps({"type": "header", "schema": SCHEMA_VERSION, "name": s.name,
                     "fps": float(s.fps), "frames": s.frames, "seed": s.seed,
                     "params": s.params})]
    for g in sorted(s.gt, key=lambda g: g.gt_id):
        for f, box in zip(g.frames, g.boxes):
            lines.append(_dumps({"type": "gt", "gt_id": g.gt_id, "frame": f,
                                 "label": g.label, "box": box.as_list()}))
    for dets in s.detections:
        for d in dets:
            lines.append(_dumps({"type": "det", "frame": d.frame, "id": d.detection_id,
                                 "label": d.label, "score": d.score, "box": d.box.as_list()}))
    return lines


def dumps_scenario(s: Scenario) -> str:
    return "\n".join(scenario_lines(s)) + "\n"


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(s), encoding="utf-8")


def _field(rec: dict, name: str, kind, lineno: int):
    if name not in rec:
        raise ScenarioFormatError(f"line {lineno}: missing field '{name}'")
    value = rec[name]
    ok = (isinstance(value, kind) and not isinstance(value, bool)) if kind is not bool else isinstance(value, bool)
    if not ok:
        raise ScenarioFormatError(f"line {lineno}: field '{name}' has invalid type {type(value).__name__}")
    return value


def _box(rec: dict, lineno: int) -> Box3D:
    raw = _field(rec, "box", list, lineno)
    if len(raw) != 7 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        raise ScenarioFormatError(f"line {lineno}: field 'box' must hold 7 numbers")
    try:
        return Box3D.from_list(raw)
    except ValueError as exc:
        raise ScenarioFormatError(f"line {lineno}: field 'box': {exc}") from None


def loads_scenario(text: str) -> Scenario:
    header = None
    gt_rows: dict[int, list[tuple[int, Box3D, str]]] = {}
    det_rows: list[Detection] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ScenarioFormatError(f"line {lineno}: record must be an object")
        kind = rec.get("type")
        if header is None:
            if kind != "header":
                raise ScenarioFormatError(f"line {lineno}: field 'type': first record must be a header")
            schema = _field(rec, "schema", int, lineno)
            if schema != SCHEMA_VERSION:
                raise ScenarioFormatError(f"line {lineno}: field 'schema': unsupported version {schema}")
            header = rec
            frames = _field(rec, "frames", int, lineno)
            if frames < 0:
                raise ScenarioFormatError(f"line {lineno}: field 'frames' must be >= 0")
            _field(rec, "fps", (int, float), lineno)
            _field(rec, "name", str, lineno)
            continue
        if kind == "gt":
            gt_id = _field(rec, "gt_id", int, lineno)
            frame = _field(rec, "frame", int, lineno)
            label = _field(rec, "label", str, lineno)
            if not 0 <= frame < header["frames"]:
                raise ScenarioFormatError(f"line {lineno}: field 'frame' out of range")
            gt_rows.setdefault(gt_id, []).append((frame, _box(rec, lineno), label))
        elif kind == "det":
            frame = _field(rec, "frame", int, lineno)
            if not 0 <= frame < header["frames"]:
                raise ScenarioFormatError(f"line {lineno}: field 'frame' out of range")
            det_id = _field(rec, "id", int, lineno)
            label = _field(rec, "label", str, lineno)
            score = _field(rec, "score", (int, float), lineno)
            if not 0.0 <= score <= 1.0:
                raise ScenarioFormatError(f"line {lineno}: field 'score' must be in [0, 1], got {score}")
            det_rows.append(Detection(frame, det_id, _box(rec, lineno), label, score))
        else:
            raise ScenarioFormatError(f"line {lineno}: field 'type': unknown record type {kind!r}")
    if header is None:
        raise ScenarioFormatError("line 1: field 'type': missing header record")
    frames = header["frames"]
    detections: list[list[Detection]] = [[] for _ in range(frames)]
    for d in det_rows:
        detections[d.frame].append(d)
    gt = []
    for gt_id, rows in gt_rows.items():
        try:
            gt.append(GtTrajectory(gt_id, tuple(r[0] for r in rows),
                                   tuple(r[1] for r in rows), rows[0][2]))
        except ValueError as exc:
            raise ScenarioFormatError(f"gt {gt_id}: {exc}") from None
    seed = header.get("seed")
    return Scenario(name=header["name"], fps=header["fps"], frames=frames,
                    detections=detections, gt=sorted(gt, key=lambda g: g.gt_id),
                    seed=seed, params=header.get("params", {}))


def load_scenario(path) -> Scenario:
    return loads_scenario(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------- presets


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    fps: float
    past_len: int
    horizon: int
    k: int
    matching_mode: str
    gate_threshold: float


PRESETS = {
    "kitti": DatasetPreset("kitti", fps=10.0, past_len=10, horizon=10, k=20,
                           matching_mode="iou3d", gate_threshold=0.5),
    "nuscenes": DatasetPreset("nuscenes", fps=2.0, past_len=4, horizon=12, k=10,
                              matching_mode="center2d", gate_threshold=2.0),
}


# ------------------------------------------------------------ generators


def _json_params(obj) -> dict:
    return json.loads(json.dumps(asdict(obj)))


def _noisy(rng: np.random.Generator, box: Box3D, sigma: float) -> Box3D:
    if sigma == 0.0:
        return box
    dx, dy = rng.normal(0.0, sigma, size=2)
    return box.translated(float(dx), float(dy))


def _build(name, fps, frames, tracks, rng, sigma, seed, params, label="car") -> Scenario:
    """``tracks``: per agent, a list of (frame, Box3D, visible) tuples."""
    gt = []
    detections: list[list[Detection]] = [[] for _ in range(frames)]
    for gt_id, rows in enumerate(tracks):
        gt.append(GtTrajectory(gt_id, tuple(f for f, _, _ in rows),
                               tuple(b for _, b, _ in rows), label))
    # rows are dense from frame 0, so rows[f] is frame f
    for f in range(frames):
        for rows in tracks:
            _, box, visible = rows[f]
            if visible:
                detections[f].append(Detection(f, len(detections[f]),
                                               _noisy(rng, box, sigma), label, 1.0))
    return Scenario(name, float(fps), frames, detections, gt, seed, params)


@dataclass(frozen=True)
class CrossingParams:
    """Two constant-velocity agents whose paths meet at ``center`` on ``cross_frame``.

    Agent 0 heads at ``+half_angle`` and agent 1 at ``-half_angle`` from +x.
    """

    speed: float = 1.0
    half_angle: float = math.pi / 4
    frames: int = 20
    cross_frame: int | None = None
    sigma: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    fps: float = 10.0
    dims: tuple[float, float, float] = DEFAULT_DIMS


def synth_crossing(params: CrossingParams, seed: int) -> Scenario:
    if params.speed <= 0:
        raise ValueError("speed must be positive")
    if params.frames < 1:
        raise ValueError("frames must be >= 1")
    if params.sigma < 0:
        raise ValueError("sigma must be >= 0")
    if abs(math.sin(params.half_angle)) < 1e-9:
        raise ValueError("half_angle gives parallel paths that never cross")
    cross = params.frames // 2 if params.cross_frame is None else params.cross_frame
    rng = np.random.default_rng(seed)
    length, width, height = params.dims
    tracks = []
    for sign in (1.0, -1.0):
        heading = sign * params.half_angle
        vx, vy = params.speed * math.cos(heading), params.speed * math.sin(heading)
        rows = []
        for f in range(params.frames):
            t = f - cross
            box = Box3D(params.center[0] + t * vx, params.center[1] + t * vy, 0.5 * height,
                        length, width, height, heading)
            rows.append((f, box, True))
        tracks.append(rows)
    return _build("crossing", params.fps, params.frames, tracks, rng, params.sigma,
                  seed, {"kind": "crossing", **_json_params(params)})


@dataclass(frozen=True)
class LaneParams:
    """Agents in parallel lanes along x; ``drop_windows`` are ``(agent, first, last)``."""

    n_agents: int = 1
    frames: int = 20
    speed: float = 1.0
    lane_spacing: float = 4.0
    alternate: bool = False
    start_x: float = -10.0
    sigma: float = 0.0
    drop_prob: float = 0.0
    drop_windows: tuple[tuple[int, int, int], ...] = ()
    fps: float = 10.0
    dims: tuple[float, float, float] = DEFAULT_DIMS


def synth_dropout(params: LaneParams, seed: int) -> Scenario:
    """Lane traffic with detections removed in windows or at random."""
    if params.n_agents < 1 or params.frames < 1:
        raise ValueError("n_agents and frames must be >= 1")
    if not 0.0 <= params.drop_prob <= 1.0:
        raise ValueError("drop_prob must be in [0, 1]")
    if params.sigma < 0:
        raise ValueError("sigma must be >= 0")
    for agent, first, last in params.drop_windows:
        if not 0 <= agent < params.n_agents:
            raise ValueError(f"drop window agent {agent} out of range")
        if not (0 <= first <= last < params.frames):
            raise ValueError(f"drop window ({first}, {last}) outside frame range [0, {params.frames})")
    rng = np.random.default_rng(seed)
    length, width, height = params.dims
    dropped = {(a, f) for a, first, last in params.drop_windows for f in range(first, last + 1)}
    tracks = []
    offset = 0.5 * (params.n_agents - 1) * params.lane_spacing
    for agent in range(params.n_agents):
        direction = -1.0 if params.alternate and agent % 2 else 1.0
        y = agent * params.lane_spacing - offset
        x0 = params.start_x if direction > 0 else -params.start_x
        rows = []
        for f in range(params.frames):
            box = Box3D(x0 + direction * params.speed * f, y, 0.5 * height, length, width, height,
                        0.0 if direction > 0 else -math.pi)
            visible = (agent, f) not in dropped
            if visible and params.drop_prob > 0.0:
                visible = bool(rng.random() >= params.drop_prob)
            rows.append((f, box, visible))
        tracks.append(rows)
    return _build("dropout", params.fps, params.frames, tracks, rng, params.sigma,
                  seed, {"kind": "dropout", **_json_params(params)})


@dataclass(frozen=True)
class ClutterParams:
    """Poisson false detections (``rate`` births per frame) lasting ``persistence`` frames.

    Clutter is placed at least ``min_separation`` meters from every GT box
    over its lifetime.  ``base`` is the underlying scenario (None: empty).
    """

    rate: float = 0.0
    persistence: int = 3
    extent: tuple[float, float, float, float] = (-50.0, 50.0, -50.0, 50.0)
    jitter: float = 0.1
    min_separation: float = 6.0
    frames: int = 20
    fps: float = 10.0
    base: CrossingParams | LaneParams | None = None


def synth_clutter(params: ClutterParams, seed: int) -> Scenario:
    if params.rate < 0:
        raise ValueError("clutter rate must be >= 0")
    if params.persistence < 1:
        raise ValueError("persistence must be >= 1")
    if isinstance(params.base, CrossingParams):
        base = synth_crossing(params.base, seed)
    elif isinstance(params.base, LaneParams):
        base = synth_dropout(params.base, seed)
    elif params.base is None:
        base = Scenario("empty", params.fps, params.frames,
                        [[] for _ in range(params.frames)], [], seed, {})
    else:
        raise ValueError(f"unsupported base params {type(params.base).__name__}")
    detections = [list(d) for d in base.detections]
    rng = np.random.default_rng([seed, 1])
    x0, x1, y0, y1 = params.extent
    dims = DEFAULT_DIMS
    for f in range(base.frames):
        for _ in range(int(rng.poisson(params.rate))):
            life = range(f, min(base.frames, f + params.persistence))
            gt_xy = [(b.cx, b.cy) for t in life for b in base.gt_boxes_at(t).values()]
            for _attempt in range(100):
                x, y = float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))
                if all(math.hypot(x - gx, y - gy) >= params.min_separation for gx, gy in gt_xy):
                    break
            else:
                continue
            yaw = float(rng.uniform(-math.pi, math.pi))
            score = float(rng.uniform(0.3, 0.7))
            for t in life:
                jx, jy = rng.normal(0.0, params.jitter, size=2) if params.jitter > 0 else (0.0, 0.0)
                box = Box3D(x + float(jx), y + float(jy), 0.5 * dims[2], *dims, yaw)
                detections[t].append(Detection(t, len(detections[t]), box, "car", score))
    return Scenario("clutter", base.fps, base.frames, detections, base.gt, seed,
                    {"kind": "clutter", **_json_params(params)})
