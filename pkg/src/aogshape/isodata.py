"""ISODATA clustering: k-means style reassignment with split, merge and discard steps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IsodataConfig:
    max_clusters: int = 4
    theta_s: float = 0.35  # split when a cluster's largest per-dimension stddev exceeds this
    theta_m: float = 0.15  # merge when two centroids are closer than this
    min_size: int = 2
    max_iter: int = 20
    split_offset: float = 0.5  # new centres at c +/- split_offset * sigma along the split axis


@dataclass
class IsodataResult:
    labels: np.ndarray
    centers: np.ndarray
    n_iter: int
    splits: int
    merges: int


def _assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return np.argmin(d, axis=1)  # ties go to the lower index


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Renumber the labels in use to 0..c-1, keeping their order."""
    used = np.unique(labels)
    remap = np.full(labels.max() + 1, -1)
    remap[used] = np.arange(len(used))
    return remap[labels]


def _centers(X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    c = labels.max() + 1
    return np.stack([X[labels == j].mean(0) for j in range(c)])


def isodata(X: np.ndarray, init_labels: np.ndarray | None = None,
            cfg: IsodataConfig = IsodataConfig()) -> IsodataResult:
    """Cluster the rows of ``X``.

    Starts from ``init_labels`` (one cluster when None). Each pass
    reassigns points to the nearest centre, discards clusters below
    ``min_size`` (while more than one remains), splits at most one
    over-spread cluster and merges at most one close pair. Stops when a
    pass changes nothing.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if n == 0:
        return IsodataResult(np.zeros(0, dtype=np.int64), np.zeros((0, X.shape[1] if X.ndim == 2 else 0)), 0, 0, 0)
    labels = np.zeros(n, dtype=np.int64) if init_labels is None else _relabel(np.asarray(init_labels, dtype=np.int64))
    centers = _centers(X, labels)
    splits = merges = 0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        new = _assign(X, centers)
        # discard undersized clusters, smallest first, keeping at least one
        while True:
            counts = np.bincount(new, minlength=len(centers))
            small = [j for j in range(len(centers)) if 0 < counts[j] < cfg.min_size]
            live = int((counts > 0).sum())
            if not small or live <= 1:
                break
            j = min(small, key=lambda j: (counts[j], j))
            centers = np.delete(centers, j, axis=0)
            new = _assign(X, centers)
        new = _relabel(new)
        centers = _centers(X, new)
        changed = not np.array_equal(new, labels)
        labels = new

        edited = False
        if len(centers) < cfg.max_clusters:
            best = None
            for j in range(len(centers)):
                pts = X[labels == j]
                if len(pts) < 2 * cfg.min_size:
                    continue
                sd = pts.std(0)
                a = int(np.argmax(sd))
                if sd[a] > cfg.theta_s and (best is None or sd[a] > best[0]):
                    best = (sd[a], j, a)
            if best is not None:
                sd_a, j, a = best
                lo, hi = centers[j].copy(), centers[j].copy()
                lo[a] -= cfg.split_offset * sd_a
                hi[a] += cfg.split_offset * sd_a
                centers = np.vstack([centers[:j], lo[None], centers[j + 1:], hi[None]])
                splits += 1
                edited = True
        if not edited and len(centers) > 1:
            d = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1))
            iu = np.triu_indices(len(centers), 1)
            k = int(np.argmin(d[iu]))
            if d[iu][k] < cfg.theta_m:
                a, b = iu[0][k], iu[1][k]
                na, nb = (labels == a).sum(), (labels == b).sum()
                merged = (na * centers[a] + nb * centers[b]) / (na + nb)
                centers = np.vstack([np.delete(centers, [a, b], axis=0)[:a], merged[None],
                                     np.delete(centers, [a, b], axis=0)[a:]])
                merges += 1
                edited = True
        if not changed and not edited:
            break
    if edited:
        labels = _relabel(_assign(X, centers))
        centers = _centers(X, labels)
    return IsodataResult(labels, centers, it, splits, merges)
