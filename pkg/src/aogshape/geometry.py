"""Contours, blocks, clipping, resampling and scale pyramids.

Coordinates are continuous image coordinates (x to the right, y down).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as _k


class Point(NamedTuple):
    x: float
    y: float


def _as_points(points) -> np.ndarray:
    arr = np.array(points, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise ValueError("contour coordinates must be finite")
    return arr


def dedupe_consecutive(points: np.ndarray) -> np.ndarray:
    """Drop points equal to their predecessor."""
    if len(points) < 2:
        return points
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    return points[keep]


@dataclass(frozen=True, eq=False)
class Contour:
    """An open polyline with at least two distinct consecutive points."""

    points: np.ndarray
    id: int = 0

    def __post_init__(self):
        pts = _as_points(self.points)
        if len(pts) < 2:
            raise ValueError("a contour needs at least two points")
        if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ValueError("consecutive contour points must be distinct")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points, id: int = 0) -> "Contour | None":
        """Build a contour after removing repeated points; None if degenerate."""
        pts = dedupe_consecutive(_as_points(points))
        if len(pts) < 2:
            return None
        return cls(pts, id)

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T)))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def scaled(self, s: float) -> "Contour":
        return Contour(self.points * s, self.id)

    def translated(self, tx: float, ty: float) -> "Contour":
        return Contour(self.points + np.array([tx, ty]), self.id)

    def same_as(self, other: "Contour", tol: float = 0.0) -> bool:
        if self.points.shape != other.points.shape:
            return False
        return bool(np.all(np.abs(self.points - other.points) <= tol))


@dataclass(frozen=True)
class Block:
    x: float
    y: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("block width and height must be positive")

    @property
    def origin(self) -> Point:
        return Point(self.x, self.y)

    @property
    def x1(self) -> float:
        return self.x + self.width

    @property
    def y1(self) -> float:
        return self.y + self.height

    @property
    def center(self) -> Point:
        return Point(self.x + self.width / 2.0, self.y + self.height / 2.0)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    @classmethod
    def centered(cls, cx: float, cy: float, width: float, height: float) -> "Block":
        return cls(cx - width / 2.0, cy - height / 2.0, width, height)


@dataclass(frozen=True)
class BoundingBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError(f"invalid box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return Point((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def scaled(self, s: float) -> "BoundingBox":
        return BoundingBox(self.xmin * s, self.ymin * s, self.xmax * s, self.ymax * s)

    @classmethod
    def from_block(cls, b: Block) -> "BoundingBox":
        return cls(b.x, b.y, b.x1, b.y1)


@dataclass(frozen=True, eq=False)
class ContourSet:
    """An edge map: polyline fragments on a width x height canvas."""

    contours: tuple = field(default_factory=tuple)
    width: float = 0.0
    height: float = 0.0

    def __post_init__(self):
        cs = tuple(self.contours)
        object.__setattr__(self, "contours", cs)
        ids = [c.id for c in cs]
        if len(set(ids)) != len(ids):
            raise ValueError("contour ids must be unique")
        for c in cs:
            lo = c.points.min(axis=0)
            hi = c.points.max(axis=0)
            if lo[0] < 0 or lo[1] < 0 or hi[0] > self.width or hi[1] > self.height:
                raise ValueError(f"contour {c.id} leaves the {self.width}x{self.height} canvas")

    def __len__(self) -> int:
        return len(self.contours)

    def __iter__(self):
        return iter(self.contours)

    def by_id(self, cid: int) -> Contour:
        for c in self.contours:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def scaled(self, s: float) -> "ContourSet":
        if s == 1.0:
            return self
        return ContourSet(tuple(c.scaled(s) for c in self.contours), self.width * s, self.height * s)


def polyline_length(points: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(points, axis=0).T)))


def _clip_arrays(c: Contour, b: Block):
    xmin, ymin, xmax, ymax = b.x, b.y, b.x1, b.y1
    bx0, by0, bx1, by1 = c.bounds
    if bx0 >= xmin and bx1 <= xmax and by0 >= ymin and by1 <= ymax:
        return None
    if bx1 < xmin or bx0 > xmax or by1 < ymin or by0 > ymax:
        return np.zeros((0, 2)), np.zeros(1, dtype=np.int64)
    return _k.clip_polyline(c.points, xmin, ymin, xmax, ymax)


def clip_contour(c: Contour, b: Block) -> list[Contour]:
    """Maximal sub-polylines of ``c`` inside the closed rectangle ``b``.

    Each segment is clipped Liang-Barsky style and consecutive inside
    pieces are chained. Pieces inherit the id of ``c``.
    """
    res = _clip_arrays(c, b)
    if res is None:
        return [c]
    pts, starts = res
    return [Contour(pts[starts[k]:starts[k + 1]].copy(), c.id) for k in range(len(starts) - 1)]


def longest_part_points(c: Contour, b: Block) -> np.ndarray | None:
    """Points of the longest clipped piece (first one on ties), or None."""
    res = _clip_arrays(c, b)
    if res is None:
        return c.points
    pts, starts = res
    if len(starts) < 2:
        return None
    k = _k.longest_piece(pts, starts)
    return pts[starts[k]:starts[k + 1]]


def longest_part(c: Contour, b: Block) -> Contour | None:
    pts = longest_part_points(c, b)
    if pts is None:
        return None
    if pts is c.points:
        return c
    return Contour(pts.copy(), c.id)


def canonical_points(points: np.ndarray) -> np.ndarray:
    """Orient a polyline so it starts at the endpoint with smaller (y, x)."""
    first, last = points[0], points[-1]
    if (last[1], last[0]) < (first[1], first[0]):
        return points[::-1]
    return points


def resample_contour(c: Contour | np.ndarray, n: int) -> np.ndarray:
    """``n`` points equally spaced in arc length from the canonical start."""
    if n < 2:
        raise ValueError("need n >= 2")
    pts = c.points if isinstance(c, Contour) else np.ascontiguousarray(c, dtype=np.float64)
    if len(pts) < 2 or not polyline_length(pts) > 0:
        raise ValueError("cannot resample a zero-length contour")
    return _k.resample(pts, n)


def pyramid_scales(n_scales: int, per_octave: int) -> list[float]:
    if n_scales < 1 or per_octave < 1:
        raise ValueError("n_scales and per_octave must be >= 1")
    return [2.0 ** (-k / per_octave) for k in range(n_scales)]


def build_scale_pyramid(X: ContourSet, n_scales: int = 6, per_octave: int = 2) -> list[ContourSet]:
    return [X.scaled(s) for s in pyramid_scales(n_scales, per_octave)]


def point_to_polyline_distance(q: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distance from each query point to a polyline."""
    q = np.atleast_2d(q)
    a = points[:-1][None]
    d = (points[1:] - points[:-1])[None]
    w = q[:, None, :] - a
    dd = np.sum(d * d, axis=2)
    t = np.clip(np.sum(w * d, axis=2) / dd, 0.0, 1.0)
    proj = a + t[..., None] * d
    return np.min(np.hypot(*(q[:, None, :] - proj).transpose(2, 0, 1)), axis=1)


def contours_from_polylines(polylines: Sequence, start_id: int = 0) -> list[Contour]:
    out = []
    for k, pl in enumerate(polylines):
        c = Contour.from_points(pl, start_id + k)
        if c is not None:
            out.append(c)
    return out
