"""Tracking-by-detection with single- and multi-hypothesis data association.

State vector: ``[cx, cy, cz, yaw, length, width, height, vx, vy, vz]`` with
velocities in meters per frame.  Observations are the first seven entries.

Tracklet histories are persistent linked lists, so a child hypothesis shares
its parent's history and appending a frame costs O(1).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .assignment import Assignment, CostMatrix, hungarian, murty_h_best
from .geometry import Box3D, iou3d, wrap_angle
from .scenario import Detection

STATE_DIM = 10
OBS_DIM = 7
MATCHING_MODES = ("iou3d", "center2d")

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DEAD = "dead"


@dataclass(frozen=True)
class PipelineConfig:
    n_hypotheses: int = 1
    n_samples: int = 10
    matching_mode: str = "center2d"
    gate_threshold: float = 2.0
    past_len: int = 4
    horizon: int = 12
    max_age: int = 2
    min_hits: int = 3
    children_per_parent: int | None = None
    rng_seed: int = 0
    unmatched_penalty: float = 1.0
    # Kalman noise (variances, per-frame units)
    meas_pos_var: float = 0.1
    meas_yaw_var: float = 0.1
    meas_dim_var: float = 0.01
    process_pos_var: float = 0.01
    process_vel_var: float = 0.01
    process_shape_var: float = 1e-4
    init_pos_var: float = 0.1
    init_vel_var: float = 4.0
    # prediction sample spread
    sigma_speed: float = 0.05
    sigma_heading: float = 0.05

    def __post_init__(self) -> None:
        if self.n_hypotheses < 1:
            raise ValueError("n_hypotheses must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.horizon < 1 or self.past_len < 1:
            raise ValueError("horizon and past_len must be >= 1")
        if self.gate_threshold <= 0:
            raise ValueError("gate_threshold must be > 0")
        if self.matching_mode not in MATCHING_MODES:
            raise ValueError(f"matching_mode must be one of {MATCHING_MODES}")
        if self.children_per_parent is not None and self.children_per_parent < 1:
            raise ValueError("children_per_parent must be >= 1")
        if self.max_age < 0 or self.min_hits < 1:
            raise ValueError("max_age must be >= 0 and min_hits >= 1")

    @property
    def n_children(self) -> int:
        return self.n_hypotheses if self.children_per_parent is None else self.children_per_parent

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "PipelineConfig":
        from .scenario import PRESETS

        p = PRESETS[name]
        base = dict(n_samples=p.k, matching_mode=p.matching_mode,
                    gate_threshold=p.gate_threshold, past_len=p.past_len, horizon=p.horizon)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@lru_cache(maxsize=None)
def _transition() -> np.ndarray:
    f = np.eye(STATE_DIM)
    f[0, 7] = f[1, 8] = f[2, 9] = 1.0
    f.setflags(write=False)
    return f


_OBS = np.eye(OBS_DIM, STATE_DIM)


def process_noise(cfg: PipelineConfig) -> np.ndarray:
    q = np.zeros(STATE_DIM)
    q[0:3] = cfg.process_pos_var
    q[3:7] = cfg.process_shape_var
    q[7:10] = cfg.process_vel_var
    return np.diag(q)


def measurement_noise(cfg: PipelineConfig) -> np.ndarray:
    r = np.array([cfg.meas_pos_var] * 3 + [cfg.meas_yaw_var] + [cfg.meas_dim_var] * 3)
    return np.diag(r)


def initial_covariance(cfg: PipelineConfig) -> np.ndarray:
    p = np.zeros(STATE_DIM)
    p[0:3] = cfg.init_pos_var
    p[3] = cfg.meas_yaw_var
    p[4:7] = cfg.meas_dim_var
    p[7:10] = cfg.init_vel_var
    return np.diag(p)


@dataclass(frozen=True, eq=False)
class TrackState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def box(self) -> Box3D:
        m = self.mean
        return Box3D(m[0], m[1], m[2], m[4], m[5], m[6], m[3])

    @property
    def position(self) -> tuple[float, float]:
        return (float(self.mean[0]), float(self.mean[1]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (float(self.mean[7]), float(self.mean[8]))

    @classmethod
    def from_box(cls, box: Box3D, covariance: np.ndarray) -> "TrackState":
        mean = np.array([box.cx, box.cy, box.cz, box.yaw, box.length, box.width, box.height,
                         0.0, 0.0, 0.0])
        return cls(mean, covariance.copy())


def _predict_batch(states: Sequence[TrackState], q: np.ndarray) -> list[TrackState]:
    if not states:
        return []
    f = _transition()
    means = np.stack([s.mean for s in states]) @ f.T
    covs = f @ np.stack([s.covariance for s in states]) @ f.T + q
    return [TrackState(means[i], covs[i]) for i in range(len(states))]


def kf_predict(s: TrackState, q: np.ndarray | None = None) -> TrackState:
    """Constant-velocity time update: ``x' = F x``, ``P' = F P F^T + Q``."""
    if q is None:
        q = process_noise(PipelineConfig())
    return _predict_batch([s], q)[0]


def kf_update(s: TrackState, observed: Box3D | Detection, r: np.ndarray | None = None) -> TrackState:
    """Kalman correction on ``[cx, cy, cz, yaw, l, w, h]`` with wrapped yaw innovation."""
    if isinstance(observed, Detection):
        observed = observed.box
    if r is None:
        r = measurement_noise(PipelineConfig())
    z = np.array([observed.cx, observed.cy, observed.cz, observed.yaw,
                  observed.length, observed.width, observed.height])
    x, p = s.mean, s.covariance
    innovation = z - x[:OBS_DIM]
    innovation[3] = wrap_angle(float(innovation[3]))
    ph = p[:, :OBS_DIM]
    gain = np.linalg.solve(p[:OBS_DIM, :OBS_DIM] + r, ph.T).T
    mean = x + gain @ innovation
    mean[3] = wrap_angle(float(mean[3]))
    mean[4:7] = np.maximum(mean[4:7], 1e-3)
    ikh = np.eye(STATE_DIM) - gain @ _OBS
    cov = ikh @ p @ ikh.T + gain @ r @ gain.T
    cov = 0.5 * (cov + cov.T)
    return TrackState(mean, cov)


class _Node:
    """One frame of a tracklet history (persistent cons cell)."""

    __slots__ = ("prev", "frame", "state", "detection_id", "reported", "sig")

    def __init__(self, prev, frame, state, detection_id, reported, sig):
        self.prev = prev
        self.frame = frame
        self.state = state
        self.detection_id = detection_id
        self.reported = reported
        self.sig = sig


@dataclass(frozen=True, eq=False)
class Tracklet:
    track_id: int
    birth_frame: int
    head: _Node
    hits: int = 1
    streak: int = 1
    misses: int = 0
    status: str = TENTATIVE

    @property
    def state(self) -> TrackState:
        return self.head.state

    @property
    def frame(self) -> int:
        return self.head.frame

    @property
    def last_detection_id(self) -> int | None:
        node = self.head
        while node is not None:
            if node.detection_id is not None:
                return node.detection_id
            node = node.prev
        return None

    @property
    def signature(self) -> int:
        """Hash of (id, birth, per-frame detection ids): equal histories share it."""
        return self.head.sig

    def nodes(self, last: int | None = None) -> list[_Node]:
        """History oldest-first; ``last`` limits to the most recent entries."""
        out = []
        node = self.head
        while node is not None and (last is None or len(out) < last):
            out.append(node)
            node = node.prev
        out.reverse()
        return out

    @property
    def states(self) -> list[TrackState]:
        return [n.state for n in self.nodes()]

    @property
    def detection_ids(self) -> list[int | None]:
        return [n.detection_id for n in self.nodes()]

    def positions(self, last: int | None = None) -> np.ndarray:
        nodes = self.nodes(last)
        return np.array([[n.state.mean[0], n.state.mean[1]] for n in nodes]).reshape(-1, 2)

    @property
    def reported(self) -> bool:
        """Matched and confirmed at the most recent frame."""
        return self.head.reported


@dataclass(frozen=True, eq=False)
class Hypothesis:
    hypothesis_id: int
    live: tuple[Tracklet, ...] = ()
    dead: tuple[Tracklet, ...] = ()
    cumulative_cost: float = 0.0
    parent_id: int | None = None
    next_track_id: int = 0
    frame: int = -1
    matches: tuple[tuple[int, int], ...] = ()

    @property
    def tracklets(self) -> tuple[Tracklet, ...]:
        return self.live + self.dead

    def reported_tracklets(self) -> list[Tracklet]:
        # dead tracklets died on a miss, so they are never reported
        return [t for t in self.live if t.reported]

    def dedup_key(self) -> tuple:
        return tuple(sorted((t.track_id, t.signature) for t in self.tracklets))


def initial_hypothesis() -> Hypothesis:
    return Hypothesis(hypothesis_id=0)


# ------------------------------------------------------------ affinity


def cost_matrix_from_boxes(track_boxes: Sequence[Box3D], det_boxes: Sequence[Box3D],
                           mode: str, gate: float) -> CostMatrix:
    """``iou3d``: cost ``1 - IoU`` gated at ``IoU >= gate``; ``center2d``: cost = distance gated at ``<= gate``."""
    n, m = len(track_boxes), len(det_boxes)
    if n == 0 or m == 0:
        return CostMatrix(np.zeros((n, m)))
    if mode == "center2d":
        a = np.array([(b.cx, b.cy) for b in track_boxes])
        b = np.array([(d.cx, d.cy) for d in det_boxes])
        diff = a[:, None, :] - b[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        return CostMatrix(dist, dist > gate)
    if mode == "iou3d":
        costs = np.zeros((n, m))
        forbidden = np.ones((n, m), dtype=bool)
        for i, tb in enumerate(track_boxes):
            for j, db in enumerate(det_boxes):
                value = iou3d(tb, db)
                if value >= gate:
                    costs[i, j] = 1.0 - value
                    forbidden[i, j] = False
        return CostMatrix(costs, forbidden)
    raise ValueError(f"unknown matching mode {mode!r}")


def build_cost_matrix(tracklets: Sequence[Tracklet | TrackState | Box3D],
                      detections: Sequence[Detection], cfg: PipelineConfig) -> CostMatrix:
    """Gated association costs; tracklets must already hold their predicted state."""
    boxes = []
    for t in tracklets:
        if isinstance(t, Tracklet):
            t = t.state
        boxes.append(t.box if isinstance(t, TrackState) else t)
    return cost_matrix_from_boxes(boxes, [d.box for d in detections],
                                  cfg.matching_mode, cfg.gate_threshold)


# -------------------------------------------------------------- stepping


class _Context:
    """Per-parent, per-frame scratch shared by all children of one parent."""

    def __init__(self, parent: Hypothesis, detections: Sequence[Detection],
                 frame: int, cfg: PipelineConfig):
        self.parent = parent
        self.detections = list(detections)
        self.frame = frame
        self.cfg = cfg
        self.predicted = _predict_batch([t.state for t in parent.live], process_noise(cfg))
        self.r = measurement_noise(cfg)
        self._updates: dict[tuple[int, int], TrackState] = {}

    def cost_matrix(self) -> CostMatrix:
        return build_cost_matrix(self.predicted, self.detections, self.cfg)

    def updated(self, row: int, col: int) -> TrackState:
        key = (row, col)
        state = self._updates.get(key)
        if state is None:
            state = kf_update(self.predicted[row], self.detections[col].box, self.r)
            self._updates[key] = state
        return state

    def child(self, assignment: Assignment, hypothesis_id: int) -> Hypothesis:
        parent, cfg, frame = self.parent, self.cfg, self.frame
        col_of = assignment.col_of_row()
        live: list[Tracklet] = []
        dead = list(parent.dead)
        matches = []
        for row, trk in enumerate(parent.live):
            col = col_of.get(row)
            if col is not None:
                det = self.detections[col]
                streak = trk.streak + 1
                status = trk.status
                if status == TENTATIVE and streak >= cfg.min_hits:
                    status = CONFIRMED
                node = _Node(trk.head, frame, self.updated(row, col), det.detection_id,
                             status == CONFIRMED, hash((trk.head.sig, frame, det.detection_id)))
                live.append(Tracklet(trk.track_id, trk.birth_frame, node, trk.hits + 1,
                                     streak, 0, status))
                matches.append((trk.track_id, det.detection_id))
            else:
                misses = trk.misses + 1
                status = DEAD if misses > cfg.max_age else trk.status
                node = _Node(trk.head, frame, self.predicted[row], None, False,
                             hash((trk.head.sig, frame, -1)))
                new = Tracklet(trk.track_id, trk.birth_frame, node, trk.hits, 0, misses, status)
                (dead if status == DEAD else live).append(new)
        next_id = parent.next_track_id
        p0 = initial_covariance(cfg)
        for col in assignment.unmatched_cols:
            det = self.detections[col]
            status = CONFIRMED if cfg.min_hits <= 1 else TENTATIVE
            node = _Node(None, frame, TrackState.from_box(det.box, p0), det.detection_id,
                         status == CONFIRMED, hash((next_id, frame, det.detection_id)))
            live.append(Tracklet(next_id, frame, node, 1, 1, 0, status))
            matches.append((next_id, det.detection_id))
            next_id += 1
        unmatched = len(assignment.unmatched_rows) + len(assignment.unmatched_cols)
        frame_cost = assignment.total_cost + cfg.unmatched_penalty * unmatched
        return Hypothesis(hypothesis_id=hypothesis_id, live=tuple(live), dead=tuple(dead),
                          cumulative_cost=parent.cumulative_cost + frame_cost,
                          parent_id=parent.hypothesis_id, next_track_id=next_id,
                          frame=frame, matches=tuple(sorted(matches)))


def _frame_of(hyp: Hypothesis, detections: Sequence[Detection], frame: int | None) -> int:
    if frame is None:
        frame = detections[0].frame if detections else hyp.frame + 1
    if any(d.frame != frame for d in detections):
        raise ValueError("all detections must come from the same frame")
    return frame


def step_single(hyp: Hypothesis, detections: Sequence[Detection], cfg: PipelineConfig,
                frame: int | None = None) -> Hypothesis:
    """One frame of single-hypothesis tracking: predict, gate, Hungarian, update."""
    ctx = _Context(hyp, detections, _frame_of(hyp, detections, frame), cfg)
    return ctx.child(hungarian(ctx.cost_matrix()), 0)


def step_multi(hyps: Sequence[Hypothesis], detections: Sequence[Detection], cfg: PipelineConfig,
               frame: int | None = None) -> list[Hypothesis]:
    """One frame of multi-hypothesis tracking.

    Every parent is expanded into its ``cfg.n_children`` best assignments;
    children are pooled, clones removed, and the ``cfg.n_hypotheses``
    cheapest (by cumulative cost) survive, relabelled by rank.
    """
    if not hyps:
        raise ValueError("need at least one parent hypothesis")
    ids = [h.hypothesis_id for h in hyps]
    if len(set(ids)) != len(ids):
        raise ValueError("parent hypothesis ids must be distinct")
    frame = _frame_of(hyps[0], detections, frame)
    children: list[Hypothesis] = []
    seen: set[tuple] = set()
    for parent in hyps:
        ctx = _Context(parent, detections, frame, cfg)
        for assignment in murty_h_best(ctx.cost_matrix(), cfg.n_children):
            child = ctx.child(assignment, 0)
            if len(hyps) > 1 or cfg.n_children > 1:
                key = child.dedup_key()
                if key in seen:
                    continue
                seen.add(key)
            children.append(child)
    children.sort(key=lambda h: h.cumulative_cost)
    return [dataclasses.replace(h, hypothesis_id=rank)
            for rank, h in enumerate(children[:cfg.n_hypotheses])]


def run_tracking(frames: Iterable[Sequence[Detection]], cfg: PipelineConfig,
                 multi: bool = True) -> list[list[Hypothesis]]:
    """Process a whole sequence; returns the hypothesis list after every frame."""
    hyps = [initial_hypothesis()]
    out = []
    for f, dets in enumerate(frames):
        if multi:
            hyps = step_multi(hyps, dets, cfg, frame=f)
        else:
            hyps = [step_single(hyps[0], dets, cfg, frame=f)]
        out.append(hyps)
    return out
