"""Window-level training samples cut from dataset records."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .evaluation import iou
from .geometry import BoundingBox, pyramid_scales
from .inference import TrainSample, window_origins, default_stride
from .io import SampleRecord
from .model import ModelConfig


def positive_windows(records: Sequence[SampleRecord], cfg: ModelConfig) -> list[TrainSample]:
    """One window per groundtruth box, the image rescaled so the box area matches the window's."""
    out = []
    for rec in records:
        if rec.label != 1:
            continue
        for j, b in enumerate(rec.groundtruth):
            s = math.sqrt(cfg.window_w * cfg.window_h / (b.width * b.height))
            X = rec.contours if s == 1.0 else rec.contours.scaled(s)
            cx, cy = b.center
            p0 = (cx * s - cfg.window_w / 2.0, cy * s - cfg.window_h / 2.0)
            out.append(TrainSample(X, p0, 1, f"{rec.id}#{j}"))
    return out


def negative_windows(records: Sequence[SampleRecord], cfg: ModelConfig, per_image: int = 3,
                     seed: int = 0, n_scales: int = 6, per_octave: int = 2,
                     per_positive_image: int = 0, max_iou: float = 0.5,
                     min_iou: float = 0.0) -> list[TrainSample]:
    """Windows drawn uniformly from the detection grid (all scales) of each image.

    Negative images give ``per_image`` windows. Positive images give
    ``per_positive_image`` windows among those overlapping every groundtruth
    box by less than ``max_iou`` (placements evaluation would count as false
    positives) and some box by at least ``min_iou`` (near misses).
    """
    rng = np.random.default_rng(seed)
    scales = pyramid_scales(n_scales, per_octave)
    stride = default_stride(cfg)
    out = []
    for rec in records:
        want = per_image if rec.label == -1 else per_positive_image
        if want <= 0:
            continue
        grid = []
        scaled = {}
        for k, s in enumerate(scales):
            Xs = rec.contours.scaled(s)
            scaled[k] = Xs
            for p in window_origins(Xs.width, Xs.height, cfg, stride):
                box = BoundingBox(p[0] / s, p[1] / s, (p[0] + cfg.window_w) / s, (p[1] + cfg.window_h) / s)
                o = max((iou(box, g) for g in rec.groundtruth), default=0.0)
                if o < max_iou and (rec.label == -1 or o >= min_iou):
                    grid.append((k, p))
        if not grid:
            continue
        pick = rng.choice(len(grid), size=min(want, len(grid)), replace=False)
        for j in sorted(pick.tolist()):
            k, p0 = grid[j]
            out.append(TrainSample(scaled[k], p0, -1, f"{rec.id}@{j}"))
    return out
