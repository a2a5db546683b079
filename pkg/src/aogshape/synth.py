"""Synthetic contour datasets: jittered template objects and clutter-only negatives."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import BoundingBox, Contour, ContourSet
from .io import SampleRecord

# Two object styles drawn in a 60 x 40 box (the default detection window).
DEFAULT_TEMPLATES: dict[str, list[list[tuple[float, float]]]] = {
    "mug": [
        [(0, 6), (10, 2), (25, 0), (40, 2), (48, 6)],
        [(0, 8), (2, 22), (4, 36)],
        [(4, 38), (24, 40), (44, 38)],
        [(48, 8), (46, 22), (44, 36)],
        [(48, 12), (56, 12), (60, 20), (56, 28), (47, 28)],
    ],
    "lamp": [
        [(12, 16), (20, 0), (40, 0), (48, 16), (12, 16)],
        [(30, 16), (30, 34)],
        [(16, 40), (20, 34), (40, 34), (44, 40)],
        [(0, 28), (14, 24), (30, 28), (46, 24), (60, 28)],
    ],
}


@dataclass
class SynthSpec:
    templates: dict = field(default_factory=lambda: {k: [list(map(list, p)) for p in v]
                                                     for k, v in DEFAULT_TEMPLATES.items()})
    canvas_w: float = 100.0
    canvas_h: float = 80.0
    jitter: float = 1.5
    clutter: tuple[int, int] = (10, 20)
    positive_clutter: tuple[int, int] = (0, 0)
    occlusion: float = 0.2
    seed: int = 7
    vertex_spacing: float = 4.0  # templates are densified to about this spacing before jitter

    def __post_init__(self):
        if not self.templates:
            raise ValueError("need at least one template")
        self.clutter = tuple(self.clutter)
        self.positive_clutter = tuple(self.positive_clutter)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def densify(poly: np.ndarray, spacing: float) -> np.ndarray:
    out = [poly[0]]
    for a, b in zip(poly[:-1], poly[1:]):
        k = max(1, int(np.ceil(np.hypot(*(b - a)) / spacing)))
        t = np.arange(1, k + 1)[:, None] / k
        out.extend(a + t * (b - a))
    return np.array(out, dtype=np.float64)


def _clutter_fragment(rng: np.random.Generator, W: float, H: float) -> np.ndarray:
    if rng.random() < 0.5:
        c = rng.uniform([0, 0], [W, H])
        L = rng.uniform(8, 30)
        a = rng.uniform(0, 2 * np.pi)
        d = 0.5 * L * np.array([np.cos(a), np.sin(a)])
        pts = densify(np.array([c - d, c + d]), 4.0)
    else:
        c = rng.uniform([0, 0], [W, H])
        r = rng.uniform(5, 20)
        a0 = rng.uniform(0, 2 * np.pi)
        span = rng.uniform(np.pi / 3, np.pi)
        t = np.linspace(a0, a0 + span, 9)
        pts = c + r * np.column_stack([np.cos(t), np.sin(t)])
    return pts


def _clean(pts: np.ndarray, W: float, H: float) -> np.ndarray | None:
    pts = np.column_stack([np.clip(pts[:, 0], 0, W), np.clip(pts[:, 1], 0, H)])
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts = pts[keep]
    return pts if len(pts) >= 2 else None


def _add_clutter(rng, n: int, W: float, H: float, contours: list, next_id: int) -> int:
    for _ in range(n):
        pts = _clean(_clutter_fragment(rng, W, H), W, H)
        if pts is not None:
            contours.append(Contour(pts, next_id))
            next_id += 1
    return next_id


def make_positive(spec: SynthSpec, rng: np.random.Generator, sample_id: str) -> SampleRecord:
    W, H = spec.canvas_w, spec.canvas_h
    names = sorted(spec.templates)
    name = names[int(rng.integers(len(names)))]
    polys = [densify(np.asarray(p, dtype=np.float64), spec.vertex_spacing) for p in spec.templates[name]]
    lo = np.min([p.min(0) for p in polys], axis=0)
    hi = np.max([p.max(0) for p in polys], axis=0)
    size = hi - lo
    if size[0] > W or size[1] > H:
        raise ValueError(f"template {name!r} does not fit the canvas")
    shift = rng.uniform([0, 0], [W - size[0], H - size[1]]) - lo
    jittered = [p + shift + rng.normal(0.0, spec.jitter, p.shape) if spec.jitter > 0 else p + shift for p in polys]
    keep = rng.random(len(jittered)) >= spec.occlusion
    allpts = np.vstack(jittered)
    box = BoundingBox(max(0.0, allpts[:, 0].min()), max(0.0, allpts[:, 1].min()),
                      min(W, allpts[:, 0].max()), min(H, allpts[:, 1].max()))
    contours: list[Contour] = []
    cid = 0
    for p, k in zip(jittered, keep):
        pts = _clean(p, W, H)
        if k and pts is not None:
            contours.append(Contour(pts, cid))
        cid += 1
    lo_c, hi_c = spec.positive_clutter
    if hi_c > 0:
        _add_clutter(rng, int(rng.integers(lo_c, hi_c + 1)), W, H, contours, cid)
    return SampleRecord(sample_id, 1, ContourSet(tuple(contours), W, H), [box])


def make_negative(spec: SynthSpec, rng: np.random.Generator, sample_id: str) -> SampleRecord:
    W, H = spec.canvas_w, spec.canvas_h
    lo, hi = spec.clutter
    contours: list[Contour] = []
    _add_clutter(rng, int(rng.integers(lo, hi + 1)), W, H, contours, 0)
    return SampleRecord(sample_id, -1, ContourSet(tuple(contours), W, H), [])


def synth_generate(spec: SynthSpec, n_pos: int, n_neg: int, split: str = "train",
                   stream: int = 0) -> list[SampleRecord]:
    """Records of one split; a pure function of (spec, n_pos, n_neg, stream)."""
    rng = np.random.default_rng([spec.seed, stream])
    out = [make_positive(spec, rng, f"{split}_pos{k:03d}") for k in range(n_pos)]
    out += [make_negative(spec, rng, f"{split}_neg{k:03d}") for k in range(n_neg)]
    return out


def synth_splits(spec: SynthSpec, sizes: dict[str, tuple[int, int]]) -> list[tuple[str, SampleRecord]]:
    """Several splits, each from its own random stream (in the given order)."""
    pairs = []
    for stream, (split, (n_pos, n_neg)) in enumerate(sizes.items()):
        pairs.extend((split, r) for r in synth_generate(spec, n_pos, n_neg, split, stream))
    return pairs
