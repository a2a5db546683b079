"""And-Or graph structure: or-node layout, leaf slots, collaborative edges, parameters.

Indexing is 0-based throughout: or-node ``i`` in ``range(z)`` sits at grid
cell ``(i // b2, i % b2)``; leaf slot ``s = i * m + k`` is the ``k``-th
child of or-node ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import cached_property
from typing import Sequence

import numpy as np

from .geometry import Block, Point

SC_BINS_DEFAULT = (20, 6, 2)


@dataclass(frozen=True)
class ShapeContextConfig:
    n_points: int = 20
    n_angles: int = 6
    n_radii: int = 2
    log_radial: bool = False

    def __post_init__(self):
        if min(self.n_points, self.n_angles, self.n_radii) < 1:
            raise ValueError("shape context counts must be >= 1")

    @property
    def n_bins(self) -> int:
        return self.n_angles * self.n_radii

    @property
    def dim(self) -> int:
        return self.n_points * self.n_bins


@dataclass(frozen=True)
class ModelConfig:
    """Layout and capacity of an And-Or graph.

    Displacements are searched on a grid of ``2 * displacement_steps + 1``
    positions per axis, ``displacement_step`` block widths (heights) apart.
    """

    z: int = 6
    b1: int = 2
    b2: int = 3
    m: int = 4
    window_w: float = 60.0
    window_h: float = 40.0
    displacement_steps: int = 4
    displacement_step: float = 0.125
    sc: ShapeContextConfig = field(default_factory=ShapeContextConfig)
    use_edges: bool = True
    use_root: bool = True

    def __post_init__(self):
        if self.b1 * self.b2 != self.z:
            raise ValueError(f"layout {self.b1}x{self.b2} does not hold z={self.z} or-nodes")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.displacement_steps < 0 or self.displacement_step < 0:
            raise ValueError("displacement radius must be >= 0")
        if not (self.window_w > 0 and self.window_h > 0):
            raise ValueError("window must have positive size")
        if isinstance(self.sc, dict):
            object.__setattr__(self, "sc", ShapeContextConfig(**self.sc))

    @property
    def block_w(self) -> float:
        return self.window_w / self.b2

    @property
    def block_h(self) -> float:
        return self.window_h / self.b1

    @property
    def displacement_radius(self) -> tuple[float, float]:
        r = self.displacement_steps * self.displacement_step
        return (r * self.block_w, r * self.block_h)

    @property
    def n_slots(self) -> int:
        return self.z * self.m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "sc" in d and isinstance(d["sc"], dict):
            d["sc"] = ShapeContextConfig(**d["sc"])
        return cls(**d)


def adjacent_pairs(b1: int, b2: int) -> list[tuple[int, int]]:
    """4-neighbour or-node pairs (a < b) of a b1 x b2 grid, sorted."""
    pairs = []
    for r in range(b1):
        for c in range(b2):
            i = r * b2 + c
            if c + 1 < b2:
                pairs.append((i, i + 1))
            if r + 1 < b1:
                pairs.append((i, i + b2))
    return sorted(pairs)


def enumerate_edges(cfg: ModelConfig) -> np.ndarray:
    """All slot pairs across adjacent or-nodes, sorted, shape (E, 2)."""
    m = cfg.m
    edges = [(a * m + k, b * m + l)
             for a, b in adjacent_pairs(cfg.b1, cfg.b2)
             for k in range(m) for l in range(m)]
    return np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)


class FeatureLayout:
    """Offsets of each segment inside the joint feature / parameter vector.

    Order: leaf slots (or-node major), deformation per or-node, edges, root.
    """

    def __init__(self, cfg: ModelConfig, n_edges: int):
        self.cfg = cfg
        self.d_leaf = cfg.sc.dim
        self.d_root = cfg.z * cfg.sc.n_bins
        self.n_edges = n_edges
        self.leaf_start = 0
        self.def_start = cfg.n_slots * self.d_leaf
        self.edge_start = self.def_start + 4 * cfg.z
        self.root_start = self.edge_start + n_edges
        self.dim = self.root_start + self.d_root

    def leaf(self, s: int) -> slice:
        return slice(self.leaf_start + s * self.d_leaf, self.leaf_start + (s + 1) * self.d_leaf)

    def deformation(self, i: int) -> slice:
        return slice(self.def_start + 4 * i, self.def_start + 4 * (i + 1))

    @property
    def edges(self) -> slice:
        return slice(self.edge_start, self.root_start)

    @property
    def root(self) -> slice:
        return slice(self.root_start, self.dim)

    def describe(self, index: int) -> tuple:
        """Map a coordinate to (kind, owner, bin)."""
        if not 0 <= index < self.dim:
            raise IndexError(index)
        if index < self.def_start:
            s, b = divmod(index - self.leaf_start, self.d_leaf)
            return ("leaf", s, b)
        if index < self.edge_start:
            i, b = divmod(index - self.def_start, 4)
            return ("deformation", i, b)
        if index < self.root_start:
            return ("edge", index - self.edge_start, 0)
        return ("root", 0, index - self.root_start)

    def locate(self, kind: str, owner: int, b: int) -> int:
        if kind == "leaf":
            return self.leaf_start + owner * self.d_leaf + b
        if kind == "deformation":
            return self.def_start + 4 * owner + b
        if kind == "edge":
            return self.edge_start + owner
        if kind == "root":
            return self.root_start + b
        raise ValueError(kind)


class AndOrModel:
    """Or-node layout, live leaf slots, edge topology and the flat weights."""

    def __init__(self, config: ModelConfig, live=None, omega=None, edges=None):
        self.config = config
        self.edges = enumerate_edges(config) if edges is None else np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.layout = FeatureLayout(config, len(self.edges))
        self.live = np.zeros((config.z, config.m), dtype=bool) if live is None else np.array(live, dtype=bool)
        self.omega = np.zeros(self.layout.dim) if omega is None else np.array(omega, dtype=np.float64)
        if self.omega.shape != (self.layout.dim,):
            raise ValueError(f"omega has shape {self.omega.shape}, expected ({self.layout.dim},)")

    def copy(self) -> "AndOrModel":
        return AndOrModel(self.config, self.live.copy(), self.omega.copy(), self.edges.copy())

    @property
    def z(self) -> int:
        return self.config.z

    @property
    def m(self) -> int:
        return self.config.m

    def live_slots(self, i: int) -> list[int]:
        return [i * self.m + k for k in range(self.m) if self.live[i, k]]

    def is_live(self, s: int) -> bool:
        return bool(self.live[s // self.m, s % self.m])

    @cached_property
    def pair_edges(self) -> dict[tuple[int, int], np.ndarray]:
        """Edge indices grouped by or-node pair, as (m, m) index tables."""
        m = self.m
        out: dict[tuple[int, int], np.ndarray] = {}
        for e, (sa, sb) in enumerate(self.edges):
            key = (int(sa) // m, int(sb) // m)
            tab = out.setdefault(key, np.full((m, m), -1, dtype=np.int64))
            tab[sa % m, sb % m] = e
        return out

    def leaf_weights(self, i: int) -> np.ndarray:
        """(m, d_leaf) view of the leaf weights of or-node ``i``."""
        lay = self.layout
        start = lay.leaf_start + i * self.m * lay.d_leaf
        return self.omega[start:start + self.m * lay.d_leaf].reshape(self.m, lay.d_leaf)

    def dead_mask(self) -> np.ndarray:
        """Boolean mask over omega of coordinates owned by dead slots."""
        mask = np.zeros(self.layout.dim, dtype=bool)
        for i in range(self.z):
            for k in range(self.m):
                if not self.live[i, k]:
                    mask[self.layout.leaf(i * self.m + k)] = True
        for e, (sa, sb) in enumerate(self.edges):
            if not (self.is_live(int(sa)) and self.is_live(int(sb))):
                mask[self.layout.edge_start + e] = True
        return mask

    def enforce_dead_zero(self) -> None:
        self.omega[self.dead_mask()] = 0.0
        if not self.config.use_edges:
            self.omega[self.layout.edges] = 0.0


def new_model(config: ModelConfig) -> AndOrModel:
    return AndOrModel(config)


def anchor_position(model_or_cfg, i: int, p0: Point | Sequence[float], scale: float = 1.0) -> Point:
    """Centre of or-node ``i``'s block in the window placed at ``p0``.

    ``scale`` multiplies the window size (1.0 means the model's own size).
    """
    cfg = model_or_cfg.config if isinstance(model_or_cfg, AndOrModel) else model_or_cfg
    if not 0 <= i < cfg.z:
        raise IndexError(f"or-node {i} outside 0..{cfg.z - 1}")
    r, c = divmod(i, cfg.b2)
    return Point(p0[0] + (c + 0.5) * cfg.block_w * scale, p0[1] + (r + 0.5) * cfg.block_h * scale)


def anchors(cfg: ModelConfig, p0) -> np.ndarray:
    return np.array([anchor_position(cfg, i, p0) for i in range(cfg.z)])


def displacement_grid(cfg: ModelConfig) -> np.ndarray:
    """Pixel offsets (G, 2) ordered by L1 step distance, then dy, then dx."""
    s = cfg.displacement_steps
    steps = [(a, b) for b in range(-s, s + 1) for a in range(-s, s + 1)]
    steps.sort(key=lambda ab: (abs(ab[0]) + abs(ab[1]), ab[1], ab[0]))
    st = np.array(steps, dtype=np.float64).reshape(-1, 2)
    return st * np.array([cfg.displacement_step * cfg.block_w, cfg.displacement_step * cfg.block_h])


def block_at(cfg: ModelConfig, center) -> Block:
    return Block.centered(center[0], center[1], cfg.block_w, cfg.block_h)


def create_leaf(model: AndOrModel, i: int, init_weights=None) -> int:
    """Bring the lowest dead slot of or-node ``i`` to life; returns its slot index."""
    free = np.flatnonzero(~model.live[i])
    if len(free) == 0:
        raise ValueError(f"or-node {i} already has m={model.m} live leaves")
    k = int(free[0])
    s = i * model.m + k
    model.live[i, k] = True
    seg = model.layout.leaf(s)
    model.omega[seg] = 0.0 if init_weights is None else np.asarray(init_weights, dtype=np.float64)
    return s


def remove_leaf(model: AndOrModel, s: int) -> AndOrModel:
    i, k = divmod(s, model.m)
    if not model.live[i, k]:
        raise ValueError(f"slot {s} is not live")
    model.live[i, k] = False
    model.omega[model.layout.leaf(s)] = 0.0
    incident = np.flatnonzero((model.edges[:, 0] == s) | (model.edges[:, 1] == s))
    model.omega[model.layout.edge_start + incident] = 0.0
    return model


@dataclass(eq=False)
class LatentAssignment:
    """H = (P, V) plus the contour chosen by each or-node.

    ``positions`` are or-node block centres, ``V`` is the flat 0/1 slot
    activation vector, ``selected`` holds a contour id or None per or-node.
    """

    p0: tuple[float, float]
    positions: np.ndarray
    V: np.ndarray
    selected: tuple

    def active_slots(self, m: int) -> list[int]:
        z = len(self.positions)
        out = []
        for i in range(z):
            on = np.flatnonzero(self.V[i * m:(i + 1) * m])
            out.append(i * m + int(on[0]) if len(on) == 1 else -1)
        return out

    @classmethod
    def from_slots(cls, p0, positions, slots: Sequence[int], selected, n_slots: int) -> "LatentAssignment":
        V = np.zeros(n_slots, dtype=np.int8)
        V[list(slots)] = 1
        return cls(tuple(map(float, p0)), np.asarray(positions, dtype=np.float64), V, tuple(selected))


def validate_assignment(model: AndOrModel, H: LatentAssignment, X=None) -> str | None:
    """None when ``H`` is well formed for ``model``; otherwise a diagnosis."""
    cfg = model.config
    V = np.asarray(H.V)
    if V.shape != (cfg.n_slots,):
        return "shape: V has the wrong length"
    if np.asarray(H.positions).shape != (cfg.z, 2) or len(H.selected) != cfg.z:
        return "shape: positions/selected must have one entry per or-node"
    for i in range(cfg.z):
        v = V[i * cfg.m:(i + 1) * cfg.m]
        if np.any((v != 0) & (v != 1)) or v.sum() != 1:
            return f"one-hot: or-node {i} activates {int(v.sum())} leaves"
        k = int(np.flatnonzero(v)[0])
        if not model.live[i, k]:
            return f"dead slot: or-node {i} activates dead slot {i * cfg.m + k}"
    rx, ry = cfg.displacement_radius
    tol = 1e-9 * (1.0 + max(cfg.block_w, cfg.block_h))
    for i in range(cfg.z):
        a = anchor_position(cfg, i, H.p0)
        dx, dy = np.asarray(H.positions[i]) - np.asarray(a)
        if abs(dx) > rx + tol or abs(dy) > ry + tol:
            return f"deformation bound: or-node {i} displaced by ({dx:.3g}, {dy:.3g})"
    if X is not None:
        ids = {c.id for c in X}
        for i, cid in enumerate(H.selected):
            if cid is not None and cid not in ids:
                return f"selected contour: or-node {i} selects missing contour {cid}"
    return None
