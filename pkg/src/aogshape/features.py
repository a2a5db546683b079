"""Feature maps: shape context leaves, deformation, root layout and the joint vector."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels as _k
from .geometry import Block, Contour, ContourSet, longest_part_points, resample_contour
from .model import (AndOrModel, LatentAssignment, ModelConfig, ShapeContextConfig,
                    anchors, block_at, validate_assignment)


def shape_context(points: np.ndarray, frame: Block, cfg: ShapeContextConfig = ShapeContextConfig()) -> np.ndarray:
    """Concatenated per-point polar histograms of the other sample points.

    Angle bins start at angle 0; radii are measured against the frame
    diagonal R with a linear boundary at R / 2 (for two radial bins) and
    points past R fall in the outer bin. Each per-point histogram sums to one.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = cfg.n_points
    if pts.ndim != 2 or pts.shape != (n, 2):
        raise ValueError(f"expected {n} points, got array of shape {pts.shape}")
    return _k.shape_context(pts, frame.diagonal, cfg.n_angles, cfg.n_radii, cfg.log_radial)


def leaf_points(c: Contour | None, b: Block, cfg: ShapeContextConfig = ShapeContextConfig()) -> np.ndarray | None:
    """Resampled points of the longest piece of ``c`` inside ``b`` (None if it misses)."""
    if c is None:
        return None
    pts = longest_part_points(c, b)
    if pts is None:
        return None
    return resample_contour(pts, cfg.n_points)


def leaf_feature(c: Contour | None, b: Block, cfg: ShapeContextConfig = ShapeContextConfig()) -> np.ndarray:
    pts = leaf_points(c, b, cfg)
    if pts is None:
        return np.zeros(cfg.dim)
    return shape_context(pts, b, cfg)


def deformation_feature(anchor, p_i, b: Block) -> np.ndarray:
    dx = (p_i[0] - anchor[0]) / b.width
    dy = (p_i[1] - anchor[1]) / b.height
    return np.array([dx, dy, dx * dx, dy * dy])


def root_counts(points: np.ndarray | None, centers: np.ndarray, R: float, cfg: ShapeContextConfig) -> np.ndarray:
    """Raw (z, n_bins) counts of ``points`` around each block centre."""
    z = len(centers)
    if points is None:
        return np.zeros((z, cfg.n_bins))
    counts = _k.center_counts(np.ascontiguousarray(points, dtype=np.float64)[None], np.ascontiguousarray(centers, dtype=np.float64),
                              R, cfg.n_angles, cfg.n_radii, cfg.log_radial)
    return counts.reshape(z, cfg.n_bins)


def root_normaliser(cfg: ModelConfig) -> float:
    return float(cfg.z * cfg.sc.n_points)


def window_block(cfg: ModelConfig, p0) -> Block:
    return Block(p0[0], p0[1], cfg.window_w, cfg.window_h)


def root_feature(selections: Sequence, window: Block, cfg: ModelConfig) -> np.ndarray:
    """Per-block-centre polar histograms of every selected sample point.

    ``selections`` holds, per or-node, the sampled points of its chosen
    contour piece (an (n_points, 2) array) or None. Counts are divided by
    the fixed ``z * n_points`` so that each or-node's share adds up.
    """
    if len(selections) != cfg.z:
        raise ValueError(f"need {cfg.z} selections, got {len(selections)}")
    centers = anchors(cfg, window.origin)
    total = np.zeros((cfg.z, cfg.sc.n_bins))
    for pts in selections:
        if pts is not None:
            total += root_counts(pts, centers, window.diagonal, cfg.sc)
    return total.ravel() / root_normaliser(cfg)


def assemble_joint(X: ContourSet, model: AndOrModel, H: LatentAssignment) -> np.ndarray:
    """phi(X, H) laid out like ``model.omega``."""
    problem = validate_assignment(model, H, X)
    if problem:
        raise ValueError(f"inconsistent assignment: {problem}")
    cfg = model.config
    lay = model.layout
    phi = np.zeros(lay.dim)
    slots = H.active_slots(cfg.m)
    centers = anchors(cfg, H.p0)
    selections = []
    for i, s in enumerate(slots):
        b = block_at(cfg, H.positions[i])
        cid = H.selected[i]
        pts = leaf_points(X.by_id(cid) if cid is not None else None, b, cfg.sc)
        selections.append(pts)
        if pts is not None:
            phi[lay.leaf(s)] = shape_context(pts, b, cfg.sc)
        phi[lay.deformation(i)] = deformation_feature(centers[i], H.positions[i], b)
    if cfg.use_edges:
        V = np.asarray(H.V)
        phi[lay.edges] = V[model.edges[:, 0]] * V[model.edges[:, 1]]
    if cfg.use_root:
        phi[lay.root] = root_feature(selections, window_block(cfg, H.p0), cfg)
    return phi


def labeled_feature(X: ContourSet, model: AndOrModel, y: int, H: LatentAssignment | None) -> np.ndarray:
    if y not in (1, -1):
        raise ValueError("label must be +1 or -1")
    if y == -1:
        return np.zeros(model.layout.dim)
    return assemble_joint(X, model, H)
