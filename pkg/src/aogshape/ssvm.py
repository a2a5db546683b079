"""n-slack structural SVM: cutting-plane constraint generation plus SMO on the dual.

Primal, for anchors a_k and working constraints (k, delta = a_k - phi, loss):

    min 1/2 |w|^2 + D sum_k xi_k   s.t.  w . delta >= loss - xi_k,  xi_k >= 0

Dual (scaled by 1/D): max sum a*loss - D/2 |sum a*delta|^2 with a >= 0 and
sum over each sample's constraints <= 1, and w = D sum a*delta. Each sample
keeps a "null" constraint (delta 0, loss 0), the ground-truth labelling
itself, whose multiplier absorbs the slack of the simplex so that SMO only
ever moves mass between two constraints of the same sample.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import _kernels as _k

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class WorkingConstraint:
    k: int
    y: int
    delta: np.ndarray
    loss: float
    H: Any = None
    null: bool = False


class DualState:
    """Working set with its multipliers; deltas and their Gram matrix live in growable buffers."""

    def __init__(self, n_samples: int, dim: int, D: float):
        self.D = D
        self.dim = dim
        self.constraints: list[WorkingConstraint] = []
        self._cap = 0
        self._n = 0
        self._A = np.zeros((0, dim))
        self._G = np.zeros((0, 0))
        self._owner = np.zeros(0, dtype=np.int64)
        self._loss = np.zeros(0)
        self._alpha = np.zeros(0)
        self.n_samples = n_samples
        self.add_many([WorkingConstraint(k, 0, np.zeros(dim), 0.0, null=True) for k in range(n_samples)])
        self._alpha[:n_samples] = 1.0

    @classmethod
    def empty(cls, n_samples: int, dim: int, D: float) -> "DualState":
        return cls(n_samples, dim, D)

    @property
    def alpha(self) -> np.ndarray:
        return self._alpha[:self._n]

    @alpha.setter
    def alpha(self, a) -> None:
        self._alpha[:self._n] = a

    @property
    def owner(self) -> np.ndarray:
        return self._owner[:self._n]

    @property
    def losses(self) -> np.ndarray:
        return self._loss[:self._n]

    @property
    def deltas(self) -> np.ndarray:
        return self._A[:self._n]

    def gram(self) -> np.ndarray:
        return self._G[:self._n, :self._n]

    def _reserve(self, need: int) -> None:
        if need <= self._cap:
            return
        cap = max(need, 2 * self._cap, 64)
        n = self._n
        A = np.zeros((cap, self.dim))
        A[:n] = self._A[:n]
        G = np.zeros((cap, cap))
        G[:n, :n] = self._G[:n, :n]
        owner = np.zeros(cap, dtype=np.int64)
        owner[:n] = self._owner[:n]
        loss = np.zeros(cap)
        loss[:n] = self._loss[:n]
        alpha = np.zeros(cap)
        alpha[:n] = self._alpha[:n]
        self._A, self._G, self._owner, self._loss, self._alpha, self._cap = A, G, owner, loss, alpha, cap

    def add_many(self, cons: Sequence[WorkingConstraint]) -> None:
        if not cons:
            return
        n, b = self._n, len(cons)
        self._reserve(n + b)
        new = np.stack([c.delta for c in cons])
        self._A[n:n + b] = new
        cross = new @ self._A[:n].T
        self._G[n:n + b, :n] = cross
        self._G[:n, n:n + b] = cross.T
        self._G[n:n + b, n:n + b] = new @ new.T
        self._owner[n:n + b] = [c.k for c in cons]
        self._loss[n:n + b] = [c.loss for c in cons]
        self._alpha[n:n + b] = 0.0
        self.constraints.extend(cons)
        self._n = n + b

    def add(self, c: WorkingConstraint) -> None:
        self.add_many([c])

    def prune(self, tol: float = 1e-8) -> int:
        """Drop non-null constraints with alpha < tol; their mass goes to the sample's null constraint."""
        n = self._n
        a = self.alpha
        null = np.array([c.null for c in self.constraints])
        keep = null | (a >= tol)
        dropped = int((~keep).sum())
        if not dropped:
            return 0
        lost = np.bincount(self.owner[~keep], weights=a[~keep], minlength=self.n_samples)
        idx = np.flatnonzero(keep)
        m = len(idx)
        self._A[:m] = self._A[idx]
        self._G[:m, :m] = self._G[np.ix_(idx, idx)]
        self._owner[:m] = self._owner[idx]
        self._loss[:m] = self._loss[idx]
        self._alpha[:m] = self._alpha[idx]
        self.constraints = [self.constraints[j] for j in idx]
        self._n = m
        for j, c in enumerate(self.constraints):
            if c.null:
                self._alpha[j] += lost[c.k]
        return dropped


def dual_objective(state: DualState) -> float:
    """Dual value on the primal's scale: D (sum a*loss - D/2 a'Ka)."""
    a = state.alpha
    return float(state.D * (a @ state.losses - 0.5 * state.D * a @ state.gram() @ a))


def recover_omega(state: DualState, dead_mask: np.ndarray | None = None) -> np.ndarray:
    w = state.D * (state.alpha @ state.deltas)
    if dead_mask is not None:
        w[dead_mask] = 0.0
    return w


def primal_objective(omega: np.ndarray, state: DualState) -> float:
    """Primal value restricted to the working set."""
    margins = state.losses - state.deltas @ omega
    xi = np.zeros(state.n_samples)
    np.maximum.at(xi, state.owner, margins)
    return float(0.5 * omega @ omega + state.D * xi.sum())


def smo_ascent(state: DualState, eps_kkt: float = 1e-5, max_steps: int = 10_000_000,
               trace: Callable[[float], None] | None = None) -> DualState:
    """Pairwise exact line search inside each sample's simplex until max KKT violation < eps_kkt."""
    owner = state.owner
    order = np.argsort(owner, kind="stable")
    starts = np.searchsorted(owner[order], np.arange(state.n_samples + 1))
    a = state.alpha.copy()
    steps, values = _k.smo(np.ascontiguousarray(state.gram()), state.losses.copy(), order, starts, a,
                           float(state.D), float(eps_kkt), int(max_steps), trace is not None)
    state.alpha = a
    if trace is not None:
        for v in values:
            trace(float(state.D * v))
    return state


@dataclass
class SolveRound:
    primal: float
    dual: float
    added: int
    n_constraints: int


@dataclass
class SolveResult:
    omega: np.ndarray
    state: DualState
    rounds: list[SolveRound]


Separation = Callable[[np.ndarray, int], tuple]


def solve(anchors: Sequence[np.ndarray], separate: Separation, D: float = 0.005,
          eps_cp: float = 1e-3, eps_kkt: float = 1e-5, max_rounds: int = 200,
          dead_mask: np.ndarray | None = None, prune_every: int = 10,
          smo_trace: Callable[[float], None] | None = None) -> SolveResult:
    """Cutting-plane loop around ``smo_ascent``.

    ``separate(omega, k)`` returns ``(y, phi, loss, H)``, the most violated
    labelling of sample ``k`` under the loss-augmented score. ``anchors[k]``
    is the sample's fixed target feature (zero for negatives).
    """
    if D <= 0:
        raise ValueError("D must be positive")
    anchors = [np.asarray(a, dtype=np.float64) for a in anchors]
    if not anchors:
        raise ValueError("no samples")
    dim = len(anchors[0])
    for k, a in enumerate(anchors):
        if a.shape != (dim,) or not np.all(np.isfinite(a)):
            raise SolverError(f"anchor of sample {k} is malformed or non-finite")
    state = DualState.empty(len(anchors), dim, D)
    omega = np.zeros(dim)
    rounds: list[SolveRound] = []
    for r in range(1, max_rounds + 1):
        # slack of each sample under the working set (the null constraint keeps it >= 0)
        margins = state.losses - state.deltas @ omega
        xi = np.zeros(len(anchors))
        np.maximum.at(xi, state.owner, margins)
        new: list[WorkingConstraint] = []
        worst = np.zeros(len(anchors))
        for k, a in enumerate(anchors):
            y, phi, loss, H = separate(omega, k)
            phi = np.asarray(phi, dtype=np.float64)
            if phi.shape != (dim,) or not np.all(np.isfinite(phi)):
                raise SolverError(f"non-finite or malformed feature from sample {k} in round {r}")
            delta = a - phi
            v = loss - float(omega @ delta)
            worst[k] = max(v, 0.0)
            if v > xi[k] + eps_cp:
                new.append(WorkingConstraint(k, int(y), delta, float(loss), H))
        added = len(new)
        state.add_many(new)
        primal = float(0.5 * omega @ omega + D * worst.sum())
        rounds.append(SolveRound(primal, dual_objective(state), added, len(state.constraints)))
        if added == 0:
            log.debug("cutting plane converged after %d rounds, %d constraints", r, len(state.constraints))
            return SolveResult(omega, state, rounds)
        smo_ascent(state, eps_kkt, trace=smo_trace)
        omega = recover_omega(state, dead_mask)
        if r % prune_every == 0:
            state.prune()
    raise SolverError(f"cutting plane did not converge in {max_rounds} rounds "
                      f"({len(state.constraints)} constraints, last primal {rounds[-1].primal:.6g}, "
                      f"dual {rounds[-1].dual:.6g})")
