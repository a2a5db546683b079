import numpy as np
import pytest

from aogshape.geometry import Contour, ContourSet
from aogshape.model import (AndOrModel, LatentAssignment, ModelConfig, anchor_position,
                            displacement_grid)

GRIDS = {1: (1, 1), 2: (1, 2), 3: (1, 3), 4: (2, 2), 6: (2, 3)}


def toy_config(z=4, m=3, steps=2, **kw) -> ModelConfig:
    b1, b2 = GRIDS[z]
    return ModelConfig(z=z, b1=b1, b2=b2, m=m, window_w=20.0 * b2, window_h=16.0 * b1,
                       displacement_steps=steps, displacement_step=0.25, **kw)


def random_contours(rng, n, W, H, start_id=0) -> ContourSet:
    out = []
    cid = start_id
    while len(out) < n:
        k = int(rng.integers(2, 6))
        c = rng.uniform([0, 0], [W, H])
        pts = c + np.cumsum(rng.normal(0, 5, (k, 2)), axis=0)
        pts = np.column_stack([np.clip(pts[:, 0], 0, W), np.clip(pts[:, 1], 0, H)])
        con = Contour.from_points(pts, cid)
        if con is not None and con.length > 1e-6:
            out.append(con)
            cid += 1
    return ContourSet(tuple(out), W, H)


def random_model(rng, cfg: ModelConfig, scale=1.0) -> AndOrModel:
    live = rng.random((cfg.z, cfg.m)) < 0.6
    for i in range(cfg.z):
        if not live[i].any():
            live[i, rng.integers(cfg.m)] = True
    model = AndOrModel(cfg, live)
    model.omega = rng.normal(0, scale, model.layout.dim)
    model.enforce_dead_zero()
    return model


def random_assignment(rng, model: AndOrModel, X: ContourSet, p0) -> LatentAssignment:
    cfg = model.config
    grid = displacement_grid(cfg)
    pos, slots, sel = [], [], []
    ids = [c.id for c in X]
    for i in range(cfg.z):
        a = np.array(anchor_position(cfg, i, p0))
        pos.append(a + grid[rng.integers(len(grid))])
        slots.append(int(rng.choice(model.live_slots(i))))
        sel.append(None if not ids or rng.random() < 0.2 else int(rng.choice(ids)))
    return LatentAssignment.from_slots(p0, pos, slots, sel, cfg.n_slots)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_training_set(n_pos=6, n_neg=4, seed=3, **cfg_kw):
    """Positive and negative windows from a small synthetic dataset, with a cheap layout."""
    from aogshape.samples import negative_windows, positive_windows
    from aogshape.synth import SynthSpec, synth_generate

    kw = dict(z=2, b1=1, b2=2, m=2, displacement_steps=1, displacement_step=0.25)
    kw.update(cfg_kw)
    cfg = ModelConfig(**kw)
    recs = synth_generate(SynthSpec(seed=seed), n_pos, n_neg)
    return cfg, positive_windows(recs, cfg), negative_windows(recs, cfg, per_image=2, seed=seed)
