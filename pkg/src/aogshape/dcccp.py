"""Dynamic CCCP training: latent estimation, structural reconfiguration, convex solve.

Objective over positives P and negatives N, with S(w) = max_H w . phi(X, H):

    F(w) = 1/2 |w|^2 + D [ sum_P max(0, 1 - S) + sum_N max(0, 1 + S) ]

which is f(w) - g(w) with g(w) = D sum_P S(w) convex. Each iteration
linearises -g at the current w (q = -D sum_P phi(H*)), optionally edits
the leaf structure on feature coordinates that PCA deems non-principal,
and solves the resulting structural SVM.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .features import assemble_joint, leaf_points, shape_context
from .geometry import polyline_length
from .inference import TrainSample, loss_augmented_infer, positive_score
from .isodata import IsodataConfig, isodata
from .model import (AndOrModel, LatentAssignment, ModelConfig, anchors, block_at, create_leaf,
                    new_model, remove_leaf)
from .geometry import longest_part_points
from .ssvm import SolverError, solve

log = logging.getLogger(__name__)


@dataclass
class TrainLimits:
    D: float = 0.005
    max_iter: int = 20
    rel_tol: float = 1e-3
    create_cap: int = 1
    remove_cap: int = 1
    sigma: float = 2.0
    delta: float = 0.001
    theta_s: float = 0.35
    theta_m: float = 0.15
    min_cluster_frac: float = 0.05
    isodata_iter: int = 20
    eps_cp: float = 1e-3
    eps_kkt: float = 1e-3
    max_rounds: int = 200
    prune_k: int | None = None
    backtrack: tuple = (1.0, 0.5, 0.25, 0.125)

    @property
    def reconfigure(self) -> bool:
        return self.create_cap > 0 or self.remove_cap > 0

    def isodata_config(self, m: int, n_pos: int) -> IsodataConfig:
        return IsodataConfig(max_clusters=m, theta_s=self.theta_s, theta_m=self.theta_m,
                             min_size=max(2, math.ceil(self.min_cluster_frac * n_pos)),
                             max_iter=self.isodata_iter)


@dataclass
class LatentEstimate:
    H: list[LatentAssignment]
    phi: np.ndarray  # (n_pos, dim)
    scores: np.ndarray


@dataclass
class PcaBasis:
    u: np.ndarray
    E: np.ndarray  # (K, dim), rows orthonormal
    beta: np.ndarray  # (n, K)
    eigenvalues: np.ndarray

    @property
    def K(self) -> int:
        return len(self.E)

    def residuals(self, phi: np.ndarray) -> np.ndarray:
        rec = self.u + self.beta @ self.E
        return np.linalg.norm(phi - rec, axis=1)


@dataclass
class Move:
    sample: int
    src: int
    dst: int


@dataclass
class ReconfigPlan:
    partitions: dict[int, dict[int, int]] = field(default_factory=dict)  # or-node -> sample -> cluster
    moves: list[Move] = field(default_factory=list)
    creations: list[tuple[int, int, np.ndarray]] = field(default_factory=list)  # (or-node, slot, weights)
    removals: list[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.moves or self.creations or self.removals)


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    creations: int
    removals: int
    moves: int
    n_constraints: int
    solver_rounds: int
    pca_k: int
    non_principal: int
    rejected_step: bool
    seconds: float
    step_scale: float = 1.0


@dataclass
class TrainReport:
    initial_objective: float
    iterations: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    empty_or_nodes: list[int] = field(default_factory=list)
    leaves_per_or_node: list[int] = field(default_factory=list)

    @property
    def objectives(self) -> list[float]:
        return [self.initial_objective] + [r.objective for r in self.iterations]

    def to_dict(self) -> dict:
        return {
            "initial_objective": self.initial_objective,
            "converged": self.converged,
            "n_iterations": len(self.iterations),
            "empty_or_nodes": self.empty_or_nodes,
            "leaves_per_or_node": self.leaves_per_or_node,
            "iterations": [vars(r) for r in self.iterations],
        }


# --- objective -------------------------------------------------------------

def positive_scores(model: AndOrModel, samples: Sequence[TrainSample], prune_k: int | None = None) -> np.ndarray:
    return np.array([positive_score(model, s, prune_k)[1] for s in samples])


def objective(model: AndOrModel, positives: Sequence[TrainSample], negatives: Sequence[TrainSample],
              D: float, prune_k: int | None = None) -> float:
    w = model.omega
    sp = positive_scores(model, positives, prune_k)
    sn = positive_scores(model, negatives, prune_k)
    return float(0.5 * w @ w + D * (np.maximum(0.0, 1.0 - sp).sum() + np.maximum(0.0, 1.0 + sn).sum()))


def convex_bound(model: AndOrModel, samples: Sequence[TrainSample], anchor_phi: np.ndarray, D: float,
                 prune_k: int | None = None) -> float:
    """Upper bound of F at ``model.omega`` with the concave part frozen at the anchors."""
    w = model.omega
    total = 0.0
    for k, s in enumerate(samples):
        _, _, value = loss_augmented_infer(model, s, prune_k)
        total += value - float(w @ anchor_phi[k])
    return float(0.5 * w @ w + D * total)


def concave_part(model: AndOrModel, positives: Sequence[TrainSample], D: float) -> float:
    """g(w) = D * sum over positives of the best positive score."""
    return float(D * positive_scores(model, positives).sum())


# --- initialisation --------------------------------------------------------

def _longest_in_block(X, block) -> tuple[int | None, float]:
    best_id, best_len = None, 0.0
    for c in sorted(X.contours, key=lambda c: c.id):
        pts = longest_part_points(c, block)
        if pts is None:
            continue
        L = polyline_length(pts)
        if L > best_len:
            best_id, best_len = c.id, L
    return best_id, best_len


def initialize(config: ModelConfig, positives: Sequence[TrainSample], limits: TrainLimits = TrainLimits()):
    """Leaves from ISODATA clusters of each block's longest contour.

    Returns ``(model, H_init, phi_init, empty_or_nodes)``; ``phi_init`` holds
    the initial anchor vector of every positive.
    """
    if len(positives) < 2:
        raise ValueError("need at least two positives")
    model = new_model(config)
    cfg = config
    n = len(positives)
    chosen = np.full((n, cfg.z), -1, dtype=np.int64)
    feats: list[list[np.ndarray | None]] = [[None] * cfg.z for _ in range(n)]
    for k, s in enumerate(positives):
        centers = anchors(cfg, s.p0)
        for i in range(cfg.z):
            b = block_at(cfg, centers[i])
            cid, _ = _longest_in_block(s.X, b)
            if cid is not None:
                chosen[k, i] = cid
                feats[k][i] = shape_context(leaf_points(s.X.by_id(cid), b, cfg.sc), b, cfg.sc)

    iso = limits.isodata_config(cfg.m, n)
    slot_of = np.full((n, cfg.z), -1, dtype=np.int64)
    empty_nodes = []
    for i in range(cfg.z):
        rows = [k for k in range(n) if feats[k][i] is not None]
        if not rows:
            create_leaf(model, i)
            empty_nodes.append(i)
            log.warning("or-node %d: no contour in any positive; starting with one zero leaf", i)
            slot_of[:, i] = i * cfg.m
            continue
        X = np.stack([feats[k][i] for k in rows])
        res = isodata(X, None, iso)
        order = sorted(range(res.labels.max() + 1), key=lambda c: (-(res.labels == c).sum(), c))
        slot_for = {}
        for c in order[:cfg.m]:
            slot_for[c] = create_leaf(model, i, res.centers[c])
        first = min(slot_for.values())
        for r, k in enumerate(rows):
            slot_of[k, i] = slot_for.get(int(res.labels[r]), first)
        for k in range(n):
            if slot_of[k, i] < 0:
                slot_of[k, i] = first

    H0, phi0 = [], []
    for k, s in enumerate(positives):
        pos = anchors(cfg, s.p0)
        sel = [None if c < 0 else int(c) for c in chosen[k]]
        H = LatentAssignment.from_slots(s.p0, pos, slot_of[k], sel, cfg.n_slots)
        H0.append(H)
        phi0.append(assemble_joint(s.X, model, H))
    return model, H0, np.array(phi0), empty_nodes


# --- step I ----------------------------------------------------------------

def estimate_latent(model: AndOrModel, positives: Sequence[TrainSample], D: float,
                    prune_k: int | None = None) -> tuple[LatentEstimate, np.ndarray]:
    Hs, phis, scores = [], [], []
    for k, s in enumerate(positives):
        try:
            H, score = positive_score(model, s, prune_k)
        except ValueError as e:
            raise ValueError(f"positive sample {s.id or k} is unscorable: {e}") from e
        Hs.append(H)
        phis.append(assemble_joint(s.X, model, H))
        scores.append(score)
    phi = np.array(phis)
    return LatentEstimate(Hs, phi, np.array(scores)), -D * phi.sum(0)


# --- step II ---------------------------------------------------------------

def pca_refactor(phi: np.ndarray, sigma: float = 2.0, delta: float = 0.001) -> tuple[PcaBasis, np.ndarray]:
    """Smallest PCA basis reconstructing every sample within ``sigma``, plus the non-principal mask.

    Eigenvectors come from the (n, n) Gram matrix of the centred samples,
    ordered by descending eigenvalue, each signed so that its largest
    magnitude entry is positive.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n, dim = phi.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    u = phi.mean(0)
    C = phi - u
    lam, V = np.linalg.eigh(C @ C.T)
    lam, V = lam[::-1], V[:, ::-1]
    keep = lam > 1e-10 * max(lam[0], 1.0)
    lam, V = lam[keep], V[:, keep]
    E = (C.T @ V / np.sqrt(lam)).T if len(lam) else np.zeros((0, dim))
    for r in range(len(E)):
        j = int(np.argmax(np.abs(E[r])))
        if E[r, j] < 0:
            E[r] = -E[r]
    beta = C @ E.T
    sq = (C * C).sum(1)
    K = len(E)
    resid0 = np.sqrt(sq)
    if resid0.max() < sigma:
        K = 0
    else:
        res2 = sq[:, None] - np.cumsum(beta ** 2, axis=1)
        ok = np.flatnonzero(np.sqrt(np.maximum(res2, 0.0)).max(0) < sigma)
        if len(ok):
            K = int(ok[0]) + 1
    basis = PcaBasis(u, E[:K], beta[:, :K], lam[:K])
    mask = np.abs(u) < delta
    if K:
        mask &= (np.abs(basis.E) < delta).all(0)
    return basis, mask


def _slot_coordinates(model: AndOrModel, s: int) -> dict[tuple, int]:
    """Coordinates owned by slot ``s`` keyed so they can be matched with another slot's."""
    lay = model.layout
    m = model.m
    out = {("leaf", b): lay.leaf(s).start + b for b in range(lay.d_leaf)}
    for e, (a, b) in enumerate(model.edges):
        if a == s:
            out[("edge", int(b))] = lay.edge_start + e
        elif b == s:
            out[("edge", int(a))] = lay.edge_start + e
    return out


def _edge_index(model: AndOrModel, s: int, t: int) -> int | None:
    a, b = min(s, t), max(s, t)
    hit = np.flatnonzero((model.edges[:, 0] == a) & (model.edges[:, 1] == b))
    return int(model.layout.edge_start + hit[0]) if len(hit) else None


def reconfigure(model: AndOrModel, estimate: LatentEstimate, mask: np.ndarray, limits: TrainLimits):
    """Cluster contours on non-principal leaf bins and derive slot moves, creations and removals.

    Returns ``(plan, phi_d, q_d)``. Feature mass only ever moves between
    coordinates that are non-principal at both ends.
    """
    phi_d = estimate.phi.copy()
    plan = ReconfigPlan()
    if not limits.reconfigure:
        return plan, phi_d, -limits.D * phi_d.sum(0)
    cfg = model.config
    lay = model.layout
    m = cfg.m
    n = len(estimate.H)
    iso = limits.isodata_config(m, n)
    active = np.array([H.active_slots(m) for H in estimate.H])  # (n, z)
    new_slots: set[int] = set()
    for i in range(cfg.z):
        live = model.live_slots(i)
        rows = [k for k in range(n) if estimate.H[k].selected[i] is not None]
        if len(rows) < 2:
            continue
        bins = np.ones(lay.d_leaf, dtype=bool)
        for s in live:
            bins &= mask[lay.leaf(s)]
        if not bins.any():
            continue
        vec = np.stack([estimate.phi[k, lay.leaf(active[k, i])][bins] for k in rows])
        seed = np.array([active[k, i] for k in rows])
        res = isodata(vec, seed, iso)
        plan.partitions[i] = {k: int(c) for k, c in zip(rows, res.labels)}
        # claim slots: biggest clusters first, each takes its members' majority slot
        sizes = np.bincount(res.labels)
        claimed: dict[int, int] = {}
        taken: set[int] = set()
        unclaimed = []
        for c in sorted(range(len(sizes)), key=lambda c: (-sizes[c], c)):
            members = seed[res.labels == c]
            votes = sorted(((-(members == s).sum(), s) for s in np.unique(members) if s not in taken))
            if votes:
                claimed[c] = int(votes[0][1])
                taken.add(claimed[c])
            else:
                unclaimed.append(c)
        free = [i * m + k for k in range(m) if not model.live[i, k]]
        n_new = min(limits.create_cap, len(free), len(unclaimed))
        live_norms = [np.linalg.norm(model.omega[lay.leaf(s)]) for s in live]
        scale = float(np.median(live_norms)) if live_norms else 1.0
        for c, s_new in zip(unclaimed[:n_new], free[:n_new]):
            members = [k for k, lab in zip(rows, res.labels) if lab == c]
            mean = np.mean([estimate.phi[k, lay.leaf(active[k, i])] for k in members], axis=0)
            nrm = np.linalg.norm(mean)
            w = mean / nrm * (scale if scale > 0 else 1.0) if nrm > 0 else np.zeros(lay.d_leaf)
            plan.creations.append((i, s_new, w))
            claimed[c] = s_new
            new_slots.add(s_new)
        for k, lab in zip(rows, res.labels):
            dst = claimed.get(int(lab))
            src = int(active[k, i])
            if dst is None or dst == src:
                continue
            plan.moves.append(Move(k, src, dst))
            src_c = _slot_coordinates(model, src)
            dst_c = _slot_coordinates(model, dst)
            for key, a in src_c.items():
                if key[0] == "edge":
                    # edge to the same neighbouring slot
                    b = _edge_index(model, dst, key[1])
                else:
                    b = dst_c[key]
                if b is None or not (mask[a] and mask[b]):
                    continue
                phi_d[k, b] += phi_d[k, a]
                phi_d[k, a] = 0.0
        # removals: live slots owning only zeros across every adjusted vector
        removable = []
        for s in live:
            owned = list(_slot_coordinates(model, s).values())
            if not np.any(phi_d[:, owned]):
                removable.append(s)
        n_live_after = len(live) + sum(1 for c in plan.creations if c[0] == i)
        n_rm = min(limits.remove_cap, len(removable), n_live_after - 1)
        plan.removals.extend(removable[:max(n_rm, 0)])
    return plan, phi_d, -limits.D * phi_d.sum(0)


def apply_plan(model: AndOrModel, plan: ReconfigPlan) -> AndOrModel:
    for i, s, w in plan.creations:
        got = create_leaf(model, i, w)
        if got != s:
            raise RuntimeError(f"planned slot {s} but created {got}")
    for s in plan.removals:
        remove_leaf(model, s)
    model.enforce_dead_zero()
    return model


def check_structure(model: AndOrModel) -> None:
    for i in range(model.z):
        n = len(model.live_slots(i))
        if not 1 <= n <= model.m:
            raise RuntimeError(f"or-node {i} has {n} live leaves")
    if np.any(model.omega[model.dead_mask()] != 0.0):
        raise RuntimeError("dead slots carry non-zero weights")


# --- step III and the loop -------------------------------------------------

def _feature(model: AndOrModel, sample: TrainSample, y: int, H) -> np.ndarray:
    if y == -1:
        return np.zeros(model.layout.dim)
    return assemble_joint(sample.X, model, H)


def solve_step(model: AndOrModel, samples: Sequence[TrainSample], anchor_phi: np.ndarray, limits: TrainLimits):
    """Structural SVM with fixed anchors; returns the solver result."""
    work = model.copy()

    def separate(w, k):
        work.omega = w
        y, H, _ = loss_augmented_infer(work, samples[k], limits.prune_k)
        loss = 0.0 if y == samples[k].label else 1.0
        return y, _feature(work, samples[k], y, H), loss, H

    return solve(list(anchor_phi), separate, D=limits.D, eps_cp=limits.eps_cp, eps_kkt=limits.eps_kkt,
                 max_rounds=limits.max_rounds, dead_mask=model.dead_mask())


def train(config: ModelConfig, positives: Sequence[TrainSample], negatives: Sequence[TrainSample],
          limits: TrainLimits = TrainLimits(),
          on_iteration: Callable[[AndOrModel, IterationRecord, dict], None] | None = None):
    """Returns ``(model, report)``.

    ``on_iteration`` receives the model, the iteration record and a dict
    with the iteration's hyperplane ``q``, the weights ``omega_t`` it was
    built at, the estimate and the PCA basis (for checks).
    """
    if not positives or not negatives:
        raise ValueError("training needs positives and negatives")
    for s in positives:
        if s.label != 1:
            raise ValueError("positive sample with label != +1")
    for s in negatives:
        if s.label != -1:
            raise ValueError("negative sample with label != -1")
    model, _, _, empty = initialize(config, positives, limits)
    samples = list(positives) + list(negatives)
    n_neg = len(negatives)
    F = objective(model, positives, negatives, limits.D, limits.prune_k)
    report = TrainReport(F, empty_or_nodes=empty)
    log.info("init: objective %.6f, leaves %s", F, [len(model.live_slots(i)) for i in range(model.z)])
    for t in range(1, limits.max_iter + 1):
        t0 = time.perf_counter()
        omega_t = model.omega.copy()
        est, q = estimate_latent(model, positives, limits.D, limits.prune_k)
        basis, mask = pca_refactor(est.phi, limits.sigma, limits.delta)
        plan, phi_d, q_d = reconfigure(model, est, mask, limits)
        apply_plan(model, plan)
        check_structure(model)
        anchor_phi = np.vstack([phi_d, np.zeros((n_neg, model.layout.dim))])
        try:
            res = solve_step(model, samples, anchor_phi, limits)
        except SolverError as e:
            raise SolverError(f"iteration {t}: {e}") from e
        # the solve is inexact: walk back towards the previous weights until the
        # convex bound does not increase, and keep them if no step qualifies
        bound_old = convex_bound(model, samples, anchor_phi, limits.D, limits.prune_k)
        rejected, step_scale = True, 0.0
        for frac in limits.backtrack:
            candidate = model.copy()
            candidate.omega = model.omega + frac * (res.omega - model.omega)
            candidate.enforce_dead_zero()
            if convex_bound(candidate, samples, anchor_phi, limits.D, limits.prune_k) <= bound_old:
                model, rejected, step_scale = candidate, False, frac
                break
        check_structure(model)
        F_new = objective(model, positives, negatives, limits.D, limits.prune_k)
        rec = IterationRecord(t, F_new, len(plan.creations), len(plan.removals), len(plan.moves),
                              len(res.state.constraints), len(res.rounds), basis.K, int(mask.sum()),
                              bool(rejected), time.perf_counter() - t0, step_scale)
        report.iterations.append(rec)
        log.info("iter %d: objective %.6f, +%d -%d leaves, %d moves, %d constraints, %d rounds, %.1fs",
                 t, F_new, rec.creations, rec.removals, rec.moves, rec.n_constraints, rec.solver_rounds, rec.seconds)
        if on_iteration is not None:
            on_iteration(model, rec, {"q": q, "omega_t": omega_t, "q_d": q_d, "estimate": est, "basis": basis, "mask": mask,
                                      "phi_d": phi_d, "plan": plan})
        change = abs(F - F_new) / max(abs(F), 1e-12)
        F = F_new
        # moves alone only relabel latent slots; they can cycle without changing F
        if not (plan.creations or plan.removals) and (change < limits.rel_tol or rejected):
            report.converged = True
            break
    report.leaves_per_or_node = [len(model.live_slots(i)) for i in range(model.z)]
    return model, report
