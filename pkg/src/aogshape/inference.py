"""Scoring and maximisation over latent assignments.

Bottom-up: every live leaf slot picks its best (displacement, contour)
pair. The root score splits into one additive share per or-node (its
selected points' counts), so that share is maximised together with the
leaf and deformation terms and the search over H stays exact. Top-down:
activations V are enumerated with collaborative edge terms added.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as _k
from .features import (deformation_feature, labeled_feature, leaf_points, root_counts,
                       root_normaliser, shape_context, window_block)
from .geometry import Block, BoundingBox, ContourSet, longest_part_points, pyramid_scales
from .model import (AndOrModel, LatentAssignment, ModelConfig, anchors, block_at, displacement_grid)


@dataclass
class LeafCandidate:
    or_index: int
    slot: int
    contour_id: int | None
    position: tuple[float, float]
    response: float  # leaf response + deformation cost
    root_share: float = 0.0

    @property
    def total(self) -> float:
        return self.response + self.root_share


@dataclass
class Detection:
    box: BoundingBox
    score: float
    scale_index: int
    assignment: LatentAssignment = field(repr=False)
    image_id: str = ""


class FeatureCache:
    """Leaf features of one contour set, reused across overlapping windows.

    A contour lying wholly inside a block yields the same descriptor for
    every such block (blocks share one size), so it is stored per contour;
    partial overlaps are stored per (contour, block origin). ``block``
    additionally memoises the full hit list of a block origin.
    """

    def __init__(self, X: ContourSet, cfg: ModelConfig):
        self.X = X
        self.cfg = cfg
        order = sorted(range(len(X.contours)), key=lambda k: X.contours[k].id)
        self.contours = [X.contours[k] for k in order]  # sorted by id
        if self.contours:
            self.bounds = np.array([c.bounds for c in self.contours])
        else:
            self.bounds = np.zeros((0, 4))
        self.ids = np.array([c.id for c in self.contours], dtype=np.int64)
        self._whole: dict[int, tuple] = {}
        self._part: dict[tuple, tuple | None] = {}
        self._blocks: dict[tuple, list] = {}

    def _entry(self, pts: np.ndarray) -> tuple:
        sc = self.cfg.sc
        pts = _k.resample(np.ascontiguousarray(pts), sc.n_points)
        R = float(np.hypot(self.cfg.block_w, self.cfg.block_h))
        return (_k.shape_context(pts, R, sc.n_angles, sc.n_radii, sc.log_radial), pts)

    def whole(self, idx: int) -> tuple:
        e = self._whole.get(idx)
        if e is None:
            e = self._whole[idx] = self._entry(self.contours[idx].points)
        return e

    def partial(self, idx: int, bx: float, by: float) -> tuple | None:
        key = (idx, bx, by)
        if key in self._part:
            return self._part[key]
        block = Block(bx, by, self.cfg.block_w, self.cfg.block_h)
        pts = longest_part_points(self.contours[idx], block)
        e = None if pts is None else self._entry(pts)
        self._part[key] = e
        return e

    def block(self, bx: float, by: float) -> list:
        """(contour index, entry) pairs for every contour meeting the block, in id order."""
        key = (bx, by)
        hits = self._blocks.get(key)
        if hits is not None:
            return hits
        cb = self.bounds
        x1, y1 = bx + self.cfg.block_w, by + self.cfg.block_h
        hit = (cb[:, 2] >= bx) & (cb[:, 0] <= x1) & (cb[:, 3] >= by) & (cb[:, 1] <= y1)
        hits = []
        for j in np.flatnonzero(hit).tolist():
            c = cb[j]
            inside = c[0] >= bx and c[2] <= x1 and c[1] >= by and c[3] <= y1
            e = self.whole(j) if inside else self.partial(j, bx, by)
            if e is not None:
                hits.append((j, e))
        self._blocks[key] = hits
        return hits


class WindowCandidates:
    """All omega-independent quantities needed to score one window.

    Per or-node: a row table of candidates in tie-break order (grid
    position, then contour id, then the empty choice), their unique leaf
    features, root counts and the grid's deformation features.
    """

    def __init__(self, cfg: ModelConfig, X: ContourSet, p0, cache: FeatureCache | None = None):
        self.cfg = cfg
        self.p0 = (float(p0[0]), float(p0[1]))
        cache = cache if cache is not None and cache.X is X else FeatureCache(X, cfg)
        self.centers = anchors(cfg, self.p0)
        self.grid = displacement_grid(cfg)
        G = len(self.grid)
        bw, bh = cfg.block_w, cfg.block_h
        g_unit = self.grid / np.array([bw, bh])
        self.def_feat = np.column_stack([g_unit, g_unit ** 2])
        window = window_block(cfg, self.p0)
        R = window.diagonal

        self.row_g: list[np.ndarray] = []
        self.row_u: list[np.ndarray] = []
        self.row_cid: list[np.ndarray] = []
        self.feats: list[np.ndarray] = []
        self.rootc: list[np.ndarray] = []
        self.points: list[np.ndarray] = []

        nb = cfg.sc.n_bins
        sc = cfg.sc
        for i in range(cfg.z):
            ox = self.centers[i, 0] + self.grid[:, 0] - bw / 2.0
            oy = self.centers[i, 1] + self.grid[:, 1] - bh / 2.0
            uniq: dict[int, int] = {}
            entries: list[tuple] = []
            rg, ru, rc = [], [], []
            for g in range(G):
                for j, e in cache.block(float(ox[g]), float(oy[g])):
                    u = uniq.get(id(e))
                    if u is None:
                        u = uniq[id(e)] = len(entries)
                        entries.append(e)
                    rg.append(g)
                    ru.append(u)
                    rc.append(int(cache.ids[j]))
                # the empty choice comes after this position's contours
                rg.append(g)
                ru.append(-1)
                rc.append(-1)
            self.row_g.append(np.array(rg, dtype=np.int64))
            self.row_u.append(np.array(ru, dtype=np.int64))
            self.row_cid.append(np.array(rc, dtype=np.int64))
            if entries:
                self.feats.append(np.stack([e[0] for e in entries]))
                pts = np.stack([e[1] for e in entries])
                rc_arr = _k.center_counts(pts, self.centers, R, sc.n_angles, sc.n_radii, sc.log_radial)
            else:
                self.feats.append(np.zeros((0, sc.dim)))
                pts = np.zeros((0, sc.n_points, 2))
                rc_arr = np.zeros((0, cfg.z * nb))
            self.points.append(pts)
            self.rootc.append(rc_arr)

    def slot_scores(self, model: AndOrModel, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row scores (rows, m) for or-node ``i`` plus leaf-only and root parts."""
        cfg = self.cfg
        lay = model.layout
        W = model.leaf_weights(i)
        fs = self.feats[i] @ W.T
        if cfg.use_root:
            rs = self.rootc[i] @ model.omega[lay.root] / root_normaliser(cfg)
        else:
            rs = np.zeros(len(self.feats[i]))
        ds = self.def_feat @ model.omega[lay.deformation(i)]
        u = self.row_u[i]
        has = u >= 0
        uu = np.where(has, u, 0)
        if len(fs):
            leaf = np.where(has[:, None], fs[uu], 0.0)
            root = np.where(has, rs[uu], 0.0)
        else:
            leaf = np.zeros((len(u), cfg.m))
            root = np.zeros(len(u))
        dsr = ds[self.row_g[i]]
        return leaf + (root + dsr)[:, None], leaf, root

    def bottom_up(self, model: AndOrModel) -> list[list[LeafCandidate]]:
        out = []
        for i in range(self.cfg.z):
            total, leaf, root = self.slot_scores(model, i)
            ds = self.def_feat @ model.omega[model.layout.deformation(i)]
            cands = []
            for s in model.live_slots(i):
                k = s % self.cfg.m
                r = int(np.argmax(total[:, k]))
                g = int(self.row_g[i][r])
                cid = int(self.row_cid[i][r])
                pos = self.centers[i] + self.grid[g]
                cands.append(LeafCandidate(i, s, None if cid < 0 else cid, (float(pos[0]), float(pos[1])),
                                           float(leaf[r, k] + ds[g]), float(root[r])))
            cands.sort(key=lambda c: (-c.total, c.slot))
            out.append(cands)
        return out

    def best(self, model: AndOrModel, prune_k: int | None = None) -> tuple[LatentAssignment, float]:
        return _best_from_candidates(model, self, self.bottom_up(model), prune_k)


def _best_from_candidates(model: AndOrModel, wc: WindowCandidates, cands: list[list[LeafCandidate]],
                          prune_k: int | None) -> tuple[LatentAssignment, float]:
    cfg = model.config
    z, m = cfg.z, cfg.m
    lists = []
    for i, cl in enumerate(cands):
        if not cl:
            raise ValueError(f"or-node {i} has no live leaf; window is unscorable")
        keep = cl if prune_k is None else cl[:max(1, prune_k)]
        lists.append(sorted(keep, key=lambda c: c.slot))
    unary = [np.array([c.total for c in cl]) for cl in lists]
    sizes = [len(cl) for cl in lists]
    combos = np.array(list(itertools.product(*[range(n) for n in sizes])), dtype=np.int64).reshape(-1, z)
    total = np.zeros(len(combos))
    for i in range(z):
        total += unary[i][combos[:, i]]
    if cfg.use_edges:
        w_edge = model.omega[model.layout.edges]
        for (a, b), tab in model.pair_edges.items():
            ka = np.array([c.slot % m for c in lists[a]])
            kb = np.array([c.slot % m for c in lists[b]])
            E = w_edge[tab[np.ix_(ka, kb)]]
            total += E[combos[:, a], combos[:, b]]
    best = int(np.argmax(total))
    chosen = [lists[i][combos[best, i]] for i in range(z)]
    H = LatentAssignment.from_slots(wc.p0, [c.position for c in chosen], [c.slot for c in chosen],
                                    [c.contour_id for c in chosen], cfg.n_slots)
    return H, float(total[best])


# --- public operations -----------------------------------------------------

def _scaled(X: ContourSet, scale: float) -> ContourSet:
    return X if scale == 1.0 else X.scaled(scale)


def leaf_response(model: AndOrModel, X: ContourSet, s: int, p_i, cache: FeatureCache | None = None):
    """Best contour for leaf slot ``s`` with its block centred at ``p_i``.

    The empty choice (response 0) stands for any contour missing the block;
    real contours win ties against it, smaller ids win among themselves.
    """
    if not model.is_live(s):
        raise ValueError(f"slot {s} is dead")
    cfg = model.config
    b = block_at(cfg, p_i)
    w = model.omega[model.layout.leaf(s)]
    best_id, best = None, 0.0
    for c in sorted(X.contours, key=lambda c: c.id):
        pts = leaf_points(c, b, cfg.sc)
        if pts is None:
            continue
        r = float(w @ shape_context(pts, b, cfg.sc))
        if best_id is None and r >= best or r > best:
            best_id, best = c.id, r
    return best_id, best


def bottom_up(model: AndOrModel, X: ContourSet, p0, scale: float = 1.0,
              prune_k: int | None = None) -> list[list[LeafCandidate]]:
    wc = WindowCandidates(model.config, _scaled(X, scale), p0)
    cands = wc.bottom_up(model)
    if prune_k is not None:
        cands = [cl[:max(1, prune_k)] for cl in cands]
    return cands


def r_bot(candidates: list[list[LeafCandidate]], slots: Sequence[int]) -> float:
    by_slot = {c.slot: c for cl in candidates for c in cl}
    return float(sum(by_slot[s].response for s in slots))


def edge_response(model: AndOrModel, V) -> float:
    if not model.config.use_edges:
        return 0.0
    V = np.asarray(V)
    w = model.omega[model.layout.edges]
    return float(np.sum(w * V[model.edges[:, 0]] * V[model.edges[:, 1]]))


def top_down(model: AndOrModel, X: ContourSet, p0, V, candidates: list[list[LeafCandidate]]) -> float:
    """Root verification of the candidates selected by ``V`` plus edge terms."""
    cfg = model.config
    V = np.asarray(V)
    by_slot = {c.slot: c for cl in candidates for c in cl}
    root = 0.0
    if cfg.use_root:
        window = window_block(cfg, p0)
        centers = anchors(cfg, p0)
        total = np.zeros((cfg.z, cfg.sc.n_bins))
        for s in np.flatnonzero(V):
            c = by_slot[int(s)]
            if c.contour_id is None:
                continue
            pts = _points_of(X, c.contour_id, block_at(cfg, c.position), cfg)
            if pts is not None:
                total += root_counts(pts, centers, window.diagonal, cfg.sc)
        root = float(model.omega[model.layout.root] @ (total.ravel() / root_normaliser(cfg)))
    return root + edge_response(model, V)


def _points_of(X, cid, block, cfg):
    return leaf_points(X.by_id(cid), block, cfg.sc)


def infer_best(model: AndOrModel, X: ContourSet, p0, scale: float = 1.0, prune_k: int | None = None,
               candidates: WindowCandidates | None = None) -> tuple[LatentAssignment, float]:
    """argmax_H omega . phi(X, H) for the window at ``p0``."""
    wc = candidates if candidates is not None else WindowCandidates(model.config, _scaled(X, scale), p0)
    return wc.best(model, prune_k)


def score_sum_form(model: AndOrModel, X: ContourSet, H: LatentAssignment) -> float:
    """Score of ``H`` written out term by term (leaves, deformation, edges, root)."""
    cfg = model.config
    lay = model.layout
    slots = H.active_slots(cfg.m)
    centers = anchors(cfg, H.p0)
    total = 0.0
    selections = []
    for i, s in enumerate(slots):
        b = block_at(cfg, H.positions[i])
        cid = H.selected[i]
        pts = _points_of(X, cid, b, cfg) if cid is not None else None
        selections.append(pts)
        if pts is not None:
            total += float(model.omega[lay.leaf(s)] @ shape_context(pts, b, cfg.sc))
        w_s = -model.omega[lay.deformation(i)]
        total -= float(w_s @ deformation_feature(centers[i], H.positions[i], b))
    total += edge_response(model, H.V)
    if cfg.use_root:
        window = window_block(cfg, H.p0)
        counts = sum((root_counts(p, centers, window.diagonal, cfg.sc) for p in selections if p is not None),
                     np.zeros((cfg.z, cfg.sc.n_bins)))
        total += float(model.omega[lay.root] @ (counts.ravel() / root_normaliser(cfg)))
    return total


def window_origins(width: float, height: float, cfg: ModelConfig, stride: tuple[float, float]) -> list[tuple[float, float]]:
    """Top-left corners of windows fully inside a width x height canvas."""
    sx, sy = stride
    nx = int(math.floor((width - cfg.window_w) / sx + 1e-9)) + 1 if width >= cfg.window_w else 0
    ny = int(math.floor((height - cfg.window_h) / sy + 1e-9)) + 1 if height >= cfg.window_h else 0
    return [(ix * sx, iy * sy) for iy in range(ny) for ix in range(nx)]


def default_stride(cfg: ModelConfig) -> tuple[float, float]:
    return (cfg.window_w / 8.0, cfg.window_h / 8.0)


def nms(dets: list[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy suppression of boxes overlapping a better one by more than ``iou_thresh``."""
    from .evaluation import iou

    order = sorted(dets, key=lambda d: (-d.score, d.box.as_tuple()))
    kept: list[Detection] = []
    for d in order:
        if all(iou(d.box, k.box) <= iou_thresh for k in kept):
            kept.append(d)
    return kept


def detect(model: AndOrModel, X: ContourSet, stride: tuple[float, float] | None = None,
           prune_k: int | None = None, nms_iou: float = 0.3, n_scales: int = 6,
           per_octave: int = 2, image_id: str = "") -> list[Detection]:
    """Sliding-window detection over a scale pyramid, NMS, sorted by score."""
    cfg = model.config
    stride = stride or default_stride(cfg)
    dets: list[Detection] = []
    for k, s in enumerate(pyramid_scales(n_scales, per_octave)):
        Xs = X.scaled(s)
        origins = window_origins(Xs.width, Xs.height, cfg, stride)
        if not origins:
            continue
        cache = FeatureCache(Xs, cfg)
        for p0 in origins:
            wc = WindowCandidates(cfg, Xs, p0, cache)
            H, score = wc.best(model, prune_k)
            box = BoundingBox(p0[0] / s, p0[1] / s, (p0[0] + cfg.window_w) / s, (p0[1] + cfg.window_h) / s)
            dets.append(Detection(box, score, k, H, image_id))
    return nms(dets, nms_iou)


@dataclass
class TrainSample:
    """One window-level training example with its cached candidates."""

    X: ContourSet
    p0: tuple[float, float]
    label: int
    id: str = ""
    _cands: WindowCandidates | None = field(default=None, repr=False)

    def candidates(self, cfg: ModelConfig) -> WindowCandidates:
        if self._cands is None or self._cands.cfg != cfg:
            self._cands = WindowCandidates(cfg, self.X, self.p0)
        return self._cands


def positive_score(model: AndOrModel, sample: TrainSample, prune_k: int | None = None):
    return sample.candidates(model.config).best(model, prune_k)


def loss_augmented_infer(model: AndOrModel, sample: TrainSample, prune_k: int | None = None):
    """max over (y, H) of omega . phi(X, y, H) + L(y_k, y) under the 0-1 loss.

    Returns ``(y_hat, H_hat, value)``; ``H_hat`` is None when ``y_hat`` is -1.
    """
    H, s_pos = positive_score(model, sample, prune_k)
    if sample.label == 1:
        if s_pos > 1.0:
            return 1, H, s_pos
        return -1, None, 1.0
    if s_pos + 1.0 >= 0.0:
        return 1, H, s_pos + 1.0
    return -1, None, 0.0


def predict_label(model: AndOrModel, sample: TrainSample) -> int:
    """Sign decision of argmax_{y,H}; the exact tie goes to -1."""
    _, s = positive_score(model, sample)
    return 1 if s > 0.0 else -1


def sample_feature(model: AndOrModel, sample: TrainSample, y: int, H: LatentAssignment | None) -> np.ndarray:
    return labeled_feature(sample.X, model, y, H)
