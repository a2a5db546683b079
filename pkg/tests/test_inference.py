import itertools

import numpy as np
import pytest

from aogshape.features import (assemble_joint, deformation_feature, leaf_feature, leaf_points,
                               root_feature, window_block)
from aogshape.geometry import Contour, ContourSet
from aogshape.inference import (TrainSample, WindowCandidates, bottom_up, detect, edge_response,
                                infer_best, leaf_response, loss_augmented_infer, nms, predict_label,
                                r_bot, top_down, window_origins)
from aogshape.model import (AndOrModel, ModelConfig, anchors, block_at, displacement_grid, new_model)

from conftest import random_contours, random_model, toy_config


def brute_force(model: AndOrModel, X: ContourSet, p0) -> float:
    """max over H by rescanning every (displacement, contour or empty) per or-node and every V."""
    cfg = model.config
    lay = model.layout
    centers = anchors(cfg, p0)
    grid = displacement_grid(cfg)
    win = window_block(cfg, p0)
    w_root = model.omega[lay.root]
    best_unary = {}
    for i in range(cfg.z):
        rows = []
        for d in grid:
            pos = centers[i] + d
            b = block_at(cfg, pos)
            dfe = deformation_feature(centers[i], pos, b) @ model.omega[lay.deformation(i)]
            for c in list(X.contours) + [None]:
                f = leaf_feature(c, b, cfg.sc)
                pts = leaf_points(c, b, cfg.sc)
                sel = [None] * cfg.z
                sel[i] = pts
                root = w_root @ root_feature(sel, win, cfg) if cfg.use_root else 0.0
                rows.append((f, dfe + root))
        F = np.array([r[0] for r in rows])
        extra = np.array([r[1] for r in rows])
        for s in model.live_slots(i):
            best_unary[s] = float(np.max(F @ model.omega[lay.leaf(s)] + extra))
    best = -np.inf
    w_edge = model.omega[lay.edges]
    for slots in itertools.product(*[model.live_slots(i) for i in range(cfg.z)]):
        total = sum(best_unary[s] for s in slots)
        if cfg.use_edges:
            for e, (a, b) in enumerate(model.edges):
                if a in slots and b in slots:
                    total += w_edge[e]
        best = max(best, total)
    return best


def _toy(seed, n_contours=None):
    rng = np.random.default_rng(seed)
    z = int(rng.choice([1, 2, 3, 4]))
    cfg = toy_config(z, int(rng.integers(1, 4)), use_edges=bool(rng.random() < 0.8),
                     use_root=bool(rng.random() < 0.8))
    model = random_model(rng, cfg, scale=0.3)
    n = n_contours if n_contours is not None else int(rng.integers(0, 13))
    X = random_contours(rng, n, cfg.window_w + 20, cfg.window_h + 20)
    p0 = tuple(rng.uniform(0, 20, 2))
    return model, X, p0


@pytest.mark.parametrize("seed", range(8))
def test_infer_best_matches_brute_force(seed):
    model, X, p0 = _toy(seed)
    H, score = infer_best(model, X, p0)
    assert abs(score - brute_force(model, X, p0)) < 1e-9
    assert abs(score - model.omega @ assemble_joint(X, model, H)) < 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_pruning_is_monotone(seed):
    model, X, p0 = _toy(100 + seed)
    wc = WindowCandidates(model.config, X, p0)
    exact = wc.best(model)[1]
    scores = [wc.best(model, t)[1] for t in range(1, model.m + 1)]
    assert all(a <= b + 1e-12 for a, b in zip(scores, scores[1:]))
    assert scores[-1] == exact
    for t in range(1, model.m + 1):
        H, s = wc.best(model, t)
        assert abs(s - model.omega @ assemble_joint(X, model, H)) < 1e-9


def test_unscorable_window():
    cfg = toy_config(2, 2)
    model = new_model(cfg)
    model.live[0, 0] = True
    with pytest.raises(ValueError, match="no live leaf"):
        infer_best(model, ContourSet((), 60, 40), (0, 0))


@pytest.mark.parametrize("seed", range(5))
def test_leaf_response_matches_loop_over_contours(seed):
    rng = np.random.default_rng(seed)
    cfg = toy_config(1, 1)
    model = random_model(rng, cfg)
    X = random_contours(rng, 3, 40, 30)
    p = (12.0, 10.0)
    b = block_at(cfg, p)
    w = model.omega[model.layout.leaf(0)]
    # the empty choice is worth 0; real contours beat it on ties, then smaller ids win
    want_id, want = None, 0.0
    for c in sorted(X, key=lambda c: c.id):
        if leaf_points(c, b, cfg.sc) is None:
            continue
        r = w @ leaf_feature(c, b, cfg.sc)
        if r > want or (r == want and want_id is None):
            want_id, want = c.id, r
    assert leaf_response(model, X, 0, p) == (want_id, want)


def test_leaf_response_zero_weights_and_dead_slot(rng):
    cfg = toy_config(1, 1)
    model = new_model(cfg)
    model.live[0, 0] = True
    X = random_contours(rng, 4, 40, 30)
    assert leaf_response(model, X, 0, (12.0, 10.0))[1] == 0.0
    model.live[0, 0] = False
    with pytest.raises(ValueError):
        leaf_response(model, X, 0, (12.0, 10.0))


def test_leaf_response_single_contour():
    cfg = toy_config(1, 1)
    model = new_model(cfg)
    model.live[0, 0] = True
    model.omega[model.layout.leaf(0)] = np.linspace(0.1, 1, 240)
    c = Contour(np.array([[5.0, 4.0], [12.0, 9.0], [15.0, 3.0]]), 7)
    X = ContourSet((c,), 40, 30)
    cid, r = leaf_response(model, X, 0, (10.0, 8.0))
    assert cid == 7
    assert r == model.omega[:240] @ leaf_feature(c, block_at(cfg, (10.0, 8.0)))


def test_pinned_parts_sit_on_anchors(rng):
    cfg = toy_config(4, 2, steps=0)
    model = random_model(rng, cfg)
    X = random_contours(rng, 6, 60, 50)
    H, _ = infer_best(model, X, (3.0, 2.0))
    np.testing.assert_array_equal(H.positions, anchors(cfg, (3.0, 2.0)))
    for cl in bottom_up(model, X, (3.0, 2.0)):
        for c in cl:
            assert c.position == tuple(anchors(cfg, (3.0, 2.0))[c.or_index])


def test_candidates_recompute(rng):
    model, X, p0 = _toy(7, n_contours=8)
    cfg = model.config
    cands = bottom_up(model, X, p0)
    centers = anchors(cfg, p0)
    for i, cl in enumerate(cands):
        assert len(cl) == len(model.live_slots(i))
        assert [c.total for c in cl] == sorted((c.total for c in cl), reverse=True)
        for c in cl:
            b = block_at(cfg, c.position)
            contour = X.by_id(c.contour_id) if c.contour_id is not None else None
            leaf = model.omega[model.layout.leaf(c.slot)] @ leaf_feature(contour, b, cfg.sc)
            cost = deformation_feature(centers[i], c.position, b) @ model.omega[model.layout.deformation(i)]
            assert abs(c.response - (leaf + cost)) < 1e-9


def test_bottom_up_plus_top_down_is_the_score(rng):
    model, X, p0 = _toy(11, n_contours=10)
    cands = bottom_up(model, X, p0)
    H, score = infer_best(model, X, p0)
    slots = [s for s in H.active_slots(model.m)]
    total = r_bot(cands, slots) + top_down(model, X, p0, H.V, cands)
    assert abs(total - score) < 1e-9


def test_edge_response_examples(rng):
    cfg = toy_config(2, 2)
    model = AndOrModel(cfg, np.ones((2, 2), bool))
    V = np.array([1, 0, 0, 1])
    assert edge_response(model, V) == 0.0
    e = int(np.flatnonzero((model.edges[:, 0] == 0) & (model.edges[:, 1] == 3))[0])
    model.omega[model.layout.edge_start + e] = 0.5
    assert edge_response(model, V) == 0.5
    model.omega[model.layout.edges] = rng.normal(size=len(model.edges))
    for _ in range(10):
        V = np.zeros(4, int)
        V[rng.integers(2)] = 1
        V[2 + rng.integers(2)] = 1
        want = sum(model.omega[model.layout.edge_start + k] for k, (a, b) in enumerate(model.edges) if V[a] and V[b])
        assert abs(edge_response(model, V) - want) < 1e-12


def test_top_down_zero_top_layer(rng):
    model, X, p0 = _toy(5, n_contours=6)
    model.omega[model.layout.edges] = 0.0
    model.omega[model.layout.root] = 0.0
    H, _ = infer_best(model, X, p0)
    assert top_down(model, X, p0, H.V, bottom_up(model, X, p0)) == 0.0


def test_single_leaf_models_have_one_hypothesis(rng):
    cfg = toy_config(3, 1)
    model = random_model(rng, cfg)
    X = random_contours(rng, 5, 80, 40)
    H, score = infer_best(model, X, (0.0, 0.0))
    assert H.active_slots(1) == [0, 1, 2]
    assert abs(score - brute_force(model, X, (0.0, 0.0))) < 1e-9


def test_translation_covariance(rng):
    model, X, p0 = _toy(21, n_contours=8)
    t = np.array([16.0, 8.0])
    Y = ContourSet(tuple(c.translated(*t) for c in X), X.width + 16, X.height + 8)
    a = infer_best(model, X, p0)[1]
    b = infer_best(model, Y, (p0[0] + t[0], p0[1] + t[1]))[1]
    assert abs(a - b) < 1e-9


def test_loss_augmented_examples():
    cfg = ModelConfig(z=1, b1=1, b2=1, m=1, window_w=20, window_h=16, displacement_steps=0)
    model = new_model(cfg)
    model.live[0, 0] = True
    c = Contour(np.array([[2.0, 2.0], [18.0, 14.0]]), 0)
    X = ContourSet((c,), 20, 16)
    pos, neg = TrainSample(X, (0, 0), 1), TrainSample(X, (0, 0), -1)
    assert loss_augmented_infer(model, pos)[::2] == (-1, 1.0)
    assert loss_augmented_infer(model, neg)[::2] == (1, 1.0)
    # leaf weights chosen so that S+ = 3.2
    f = leaf_feature(c, block_at(cfg, (10, 8)))
    model.omega[model.layout.leaf(0)] = 3.2 * f / (f @ f)
    y, H, v = loss_augmented_infer(model, pos)
    assert y == 1 and abs(v - 3.2) < 1e-12 and H.selected == (0,)
    y, H, v = loss_augmented_infer(model, neg)
    assert y == 1 and abs(v - 4.2) < 1e-12


def test_predict_label_tie_goes_negative():
    cfg = toy_config(1, 1)
    model = new_model(cfg)
    model.live[0, 0] = True
    assert predict_label(model, TrainSample(ContourSet((), 40, 30), (0, 0), 1)) == -1


def test_detect_on_empty_input_with_zero_weights():
    cfg = toy_config(2, 1)
    model = new_model(cfg)
    model.live[:, 0] = True
    X = ContourSet((), 80, 40)
    dets = detect(model, X, nms_iou=1.0)
    n = sum(len(window_origins(80 * s, 40 * s, cfg, (cfg.window_w / 8, cfg.window_h / 8)))
            for s in [2.0 ** (-k / 2) for k in range(6)])
    assert len(dets) == n and all(d.score == 0.0 for d in dets)
    assert len(detect(model, X, nms_iou=0.5)) < n


def test_detection_scores_match_their_assignments(rng):
    model, X, _ = _toy(33, n_contours=10)
    for d in detect(model, X, n_scales=2)[:10]:
        s = 2.0 ** (-d.scale_index / 2)
        assert abs(d.score - model.omega @ assemble_joint(X.scaled(s), model, d.assignment)) < 1e-9
    scores = [d.score for d in detect(model, X, n_scales=2)]
    assert scores == sorted(scores, reverse=True)


def test_nms_keeps_the_best_of_overlapping_boxes():
    from aogshape.geometry import BoundingBox
    from aogshape.inference import Detection
    ds = [Detection(BoundingBox(0, 0, 10, 10), 1.0, 0, None), Detection(BoundingBox(1, 0, 11, 10), 2.0, 0, None),
          Detection(BoundingBox(30, 30, 40, 40), 0.5, 0, None)]
    kept = nms(ds, 0.5)
    assert [d.score for d in kept] == [2.0, 0.5]
    assert len(nms(ds, 1.0)) == 3
