"""Image-plane and 3D vector primitives.

Image coordinates are raster coordinates: x to the right, y *down*.
Angles returned by :func:`signed_angle` follow ``atan2(cross, dot)`` on the
raw coordinates, so ``signed_angle((1, 0), (0, 1)) == +pi/2``.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector

EPS_NORM = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box stored in center/size form (pixels)."""

    x_c: float
    y_c: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x_c, self.y_c])

    @property
    def aspect(self) -> float:
        return self.w / self.h

    def corners(self):
        """``(x0, y0, x1, y1)``."""
        return (
            self.x_c - self.w / 2,
            self.y_c - self.h / 2,
            self.x_c + self.w / 2,
            self.y_c + self.h / 2,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.x_c, self.y_c, self.w, self.h])

    def contains_point(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.corners()
        return x0 <= x <= x1 and y0 <= y <= y1

    @classmethod
    def from_corners(cls, x0, y0, x1, y1):
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def _intersection(a: BoundingBox, b: BoundingBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    if a == b:
        return 1.0
    inter = _intersection(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def containment(inner: BoundingBox, outer: BoundingBox) -> float:
    """Fraction of ``inner``'s area that lies inside ``outer``."""
    return min(_intersection(inner, outer) / inner.area, 1.0)


def signed_angle(u, v) -> float:
    """Rotation in ``(-pi, pi]`` carrying the direction of ``u`` onto ``v``.

    Its magnitude equals ``arccos(u.v / |u||v|)``.
    """
    ux, uy = float(u[0]), float(u[1])
    vx, vy = float(v[0]), float(v[1])
    if math.hypot(ux, uy) <= EPS_NORM or math.hypot(vx, vy) <= EPS_NORM:
        raise DegenerateVector(f"cannot take the angle of a zero vector: {u!r}, {v!r}")
    ang = math.atan2(ux * vy - uy * vx, ux * vx + uy * vy)
    return wrap_angle(ang)


def wrap_angle(theta: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t <= 0.0:
        t += 2.0 * math.pi
    return t - math.pi


def rotate2d(v, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    v = np.asarray(v, dtype=np.float64)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def unit(v, eps: float = EPS_NORM) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= eps:
        raise DegenerateVector(f"cannot normalize {v!r}")
    return v / n


def boxes_to_array(boxes) -> np.ndarray:
    out = np.empty((len(boxes), 4))
    for i, b in enumerate(boxes):
        out[i, 0] = b.x_c
        out[i, 1] = b.y_c
        out[i, 2] = b.w
        out[i, 3] = b.h
    return out
