"""Trajectory prediction, cross-hypothesis pooling and k-means++ sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .geometry import Box3D


@dataclass(frozen=True, eq=False, slots=True)
class TrajectorySample:
    object_key: str
    waypoints: np.ndarray  # (horizon, 2)
    source_hypothesis: int | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[1] != 2 or len(w) == 0:
            raise ValueError(f"waypoints must have shape (horizon, 2), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("waypoints must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "waypoints", w)

    @property
    def horizon(self) -> int:
        return len(self.waypoints)

    @classmethod
    def batch(cls, object_key: str, waypoints: np.ndarray,
              source_hypothesis: int | None = None) -> list[TrajectorySample]:
        """One sample per row of a ``(k, horizon, 2)`` array, validated once."""
        arr = np.array(waypoints, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[1] == 0:
            raise ValueError(f"expected shape (k, horizon, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waypoints must be finite")
        arr.setflags(write=False)
        return cls._trusted(object_key, arr, source_hypothesis)

    @classmethod
    def _trusted(cls, object_key: str, arr, source_hypothesis: int | None) -> list[TrajectorySample]:
        """Wrap already-validated read-only ``(horizon, 2)`` rows."""
        new, setattr_ = object.__new__, object.__setattr__
        out = []
        for row in arr:
            s = new(cls)
            setattr_(s, "object_key", object_key)
            setattr_(s, "waypoints", row)
            setattr_(s, "source_hypothesis", source_hypothesis)
            out.append(s)
        return out


@dataclass
class PredictionSet:
    """Samples per object at one frame; ``anchors`` hold each object's current box."""

    frame: int
    samples: dict[str, list[TrajectorySample]] = field(default_factory=dict)
    anchors: dict[str, Box3D] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, lst in self.samples.items():
            if not lst:
                raise ValueError(f"object {key!r} has no samples")

    def add(self, key: str, samples: Sequence[TrajectorySample], anchor: Box3D | None) -> None:
        if not samples:
            raise ValueError(f"object {key!r} has no samples")
        self.samples.setdefault(key, []).extend(samples)
        if anchor is not None:
            self.anchors.setdefault(key, anchor)


class Predictor(Protocol):
    """Maps past xy positions (oldest first) to ``(k, horizon, 2)`` future waypoints."""

    def predict(self, past_xy: np.ndarray, horizon: int, k: int, seed) -> np.ndarray: ...


def fit_velocity(past_xy: np.ndarray) -> np.ndarray:
    """Least-squares slope of position against frame index (per frame)."""
    past_xy = np.asarray(past_xy, dtype=float)
    n = len(past_xy)
    if n < 2:
        return np.zeros(2)
    t = np.arange(n, dtype=float)
    t -= t.mean()
    return (t @ (past_xy - past_xy.mean(axis=0))) / (t @ t)


@dataclass(frozen=True)
class ConstantVelocityPredictor:
    """Constant-velocity rollout; samples after the first perturb speed and heading."""

    sigma_speed: float = 0.05
    sigma_heading: float = 0.05

    def predict(self, past_xy: np.ndarray, horizon: int, k: int, seed,
                velocity: np.ndarray | None = None) -> np.ndarray:
        if horizon < 1 or k < 1:
            raise ValueError("horizon and k must be >= 1")
        past_xy = np.asarray(past_xy, dtype=float).reshape(-1, 2)
        if len(past_xy) == 0:
            raise ValueError("need at least one past position")
        v = fit_velocity(past_xy) if velocity is None or len(past_xy) >= 2 else np.asarray(velocity, float)
        speed = math.hypot(v[0], v[1])
        heading = math.atan2(v[1], v[0])
        speeds = np.full(k, speed)
        headings = np.full(k, heading)
        if k > 1:
            rng = np.random.default_rng(seed)
            noise = rng.standard_normal((k - 1, 2))
            speeds[1:] = np.maximum(0.0, speed + self.sigma_speed * noise[:, 0])
            headings[1:] = heading + self.sigma_heading * noise[:, 1]
        vel = np.stack([speeds * np.cos(headings), speeds * np.sin(headings)], axis=1)
        vel[0] = v
        steps = np.arange(1, horizon + 1, dtype=float)
        return past_xy[-1] + steps[None, :, None] * vel[:, None, :]


def sample_seed(rng_seed: int, *parts: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([rng_seed & 0xFFFFFFFF] + [p % (1 << 64) for p in parts])


def predict_cv(tracklet, horizon: int, k: int, rng_seed: int, *, past_len: int = 4,
               sigma_speed: float = 0.05, sigma_heading: float = 0.05,
               object_key: str | None = None, source_hypothesis: int | None = None
               ) -> list[TrajectorySample]:
    """``k`` constant-velocity samples from a tracklet's latest filtered state.

    The generator is seeded from ``rng_seed`` and the tracklet's history
    signature, so identical tracklets in different hypotheses get identical
    samples.
    """
    if horizon < 1 or k < 1:
        raise ValueError("horizon and k must be >= 1")
    past = tracklet.positions(last=past_len)
    predictor = ConstantVelocityPredictor(sigma_speed, sigma_heading)
    seed = sample_seed(rng_seed, tracklet.track_id, tracklet.signature)
    traj = predictor.predict(past, horizon, k, seed, velocity=np.array(tracklet.state.velocity))
    key = object_key if object_key is not None else f"trk:{tracklet.track_id}"
    return TrajectorySample.batch(key, traj, source_hypothesis)


def pool_predictions(per_hypothesis: Sequence[PredictionSet]) -> PredictionSet:
    """Concatenate samples per object across hypotheses (first hypothesis first)."""
    if not per_hypothesis:
        raise ValueError("nothing to pool")
    frame = per_hypothesis[0].frame
    if any(p.frame != frame for p in per_hypothesis):
        raise ValueError("prediction sets come from different frames")
    out = PredictionSet(frame)
    for p in per_hypothesis:
        for key, samples in p.samples.items():
            out.add(key, samples, p.anchors.get(key))
    return out


def kmeanspp_sample(samples: Sequence[TrajectorySample], k_out: int, rng_seed,
                    max_iter: int = 100, tol: float = 1e-6) -> list[TrajectorySample]:
    """Reduce a pool of trajectories to ``k_out`` k-means cluster centers.

    Trajectories are flattened to ``2 * horizon`` vectors; centers are seeded
    with k-means++ and refined by Lloyd iterations until no center moves more
    than ``tol`` or ``max_iter`` is reached.  With ``k_out`` or fewer distinct
    inputs the distinct inputs are returned, padded by repeating the last.
    """
    if not samples:
        raise ValueError("cannot sample from an empty pool")
    if k_out < 1:
        raise ValueError("k_out must be >= 1")
    key = samples[0].object_key
    horizon = samples[0].horizon
    x = np.stack([s.waypoints.reshape(-1) for s in samples])
    distinct: dict[bytes, int] = {}
    for i, row in enumerate(x):
        distinct.setdefault(row.tobytes(), i)
    if len(distinct) <= k_out:
        picked = [samples[i] for i in distinct.values()]
        return picked + [picked[-1]] * (k_out - len(picked))

    rng = np.random.default_rng(rng_seed)
    n = len(x)
    centers = [x[int(rng.integers(n))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k_out):
        idx = int(rng.choice(n, p=d2 / d2.sum()))
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    c = np.stack(centers)
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - c[None, :, :]) ** 2, axis=2)
        label = np.argmin(dist, axis=1)
        new = c.copy()
        for j in range(k_out):
            members = x[label == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.max(np.linalg.norm(new - c, axis=1)))
        c = new
        if shift < tol:
            break
    return [TrajectorySample(key, c[j].reshape(horizon, 2), None) for j in range(k_out)]
