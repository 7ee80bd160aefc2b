"""Oriented 3D boxes, rotated IoU and center distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Map an angle in radians to [-pi, pi).

    Values already inside the range are returned untouched so that wrapping
    is idempotent bit-for-bit.
    """
    if -math.pi <= angle < math.pi:
        return angle
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    wrapped -= math.pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class Box3D:
    """Yaw-rotated 3D box. ``(cx, cy, cz)`` is the geometric center."""

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("cx", "cy", "cz", "length", "width", "height", "yaw"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"Box3D.{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        for name in ("length", "width", "height"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"Box3D.{name} must be positive, got {getattr(self, name)!r}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height

    @property
    def center_xy(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def as_list(self) -> list[float]:
        """Serialized order: cx, cy, cz, length, width, height, yaw."""
        return [self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw]

    @classmethod
    def from_list(cls, values) -> "Box3D":
        if len(values) != 7:
            raise ValueError(f"expected 7 box values, got {len(values)}")
        return cls(*values)

    def bev_corners(self) -> list[tuple[float, float]]:
        """Footprint corners, counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        out = []
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            out.append((self.cx + c * dx - s * dy, self.cy + s * dx + c * dy))
        return out

    def translated(self, dx: float, dy: float, dz: float = 0.0) -> "Box3D":
        return Box3D(self.cx + dx, self.cy + dy, self.cz + dz,
                     self.length, self.width, self.height, self.yaw)


def _polygon_area(poly: list[tuple[float, float]]) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


def _clip_convex(subject: list[tuple[float, float]],
                 clip: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clipping; ``clip`` must be convex and counter-clockwise."""
    out = subject
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % m]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0.0:
                out.append((px, py))
                if sq < 0.0:
                    t = sp / (sp - sq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
            elif sq >= 0.0:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Area of the overlap of the two footprints (zero for edge contact)."""
    poly = _clip_convex(a.bev_corners(), b.bev_corners())
    return max(0.0, _polygon_area(poly))


def _could_overlap(a: Box3D, b: Box3D) -> bool:
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    return math.hypot(a.cx - b.cx, a.cy - b.cy) < ra + rb


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU of two yaw-rotated boxes, in [0, 1]."""
    if a == b:
        return 1.0
    # fixed argument order keeps the result bit-identical under swapping
    if a.as_list() > b.as_list():
        a, b = b, a
    if not _could_overlap(a, b):
        return 0.0
    z_overlap = (min(a.cz + 0.5 * a.height, b.cz + 0.5 * b.height)
                 - max(a.cz - 0.5 * a.height, b.cz - 0.5 * b.height))
    if z_overlap <= 0.0:
        return 0.0
    area = bev_intersection_area(a, b)
    if area <= 0.0:
        return 0.0
    inter = area * z_overlap
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))


def center_distance_2d(a: Box3D, b: Box3D) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)
