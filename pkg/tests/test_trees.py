import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from raylbe import potentials as pt
from raylbe.config import SimConfig
from raylbe.densities import VelocityDensity
from raylbe.dynamics import Background, run_trajectory, sample_background
from raylbe.trees import (MarkedTree, OverlapError, classify, extract_tree, lemma_bound, measure_excluded,
                          replay)

EPS = 0.02


def _tree(draw_n):
    t = np.cumsum(np.full(draw_n, 0.1))
    return MarkedTree(np.zeros(3), np.ones(3), t, np.linspace(0, 1, draw_n), np.zeros(draw_n),
                      np.ones((draw_n, 3)))


nodes = st.lists(st.tuples(st.floats(1e-3, 1.0), st.floats(0, 5), st.floats(0, 2 * math.pi - 1e-9),
                           st.lists(st.floats(-5, 5), min_size=3, max_size=3)), max_size=8)


@given(nodes)
def test_tree_json_round_trip_and_parent(ns):
    tree = MarkedTree(np.array([0.1, 0.2, 0.3]), np.array([1.0, -1.0, 0.5]))
    t = 0.0
    for dt, r, z, v in ns:
        t += dt
        tree.append(t, r, z, v)
    tree.check(R=5.0)
    back = MarkedTree.from_dict(json.loads(tree.to_json()))
    assert back.n == tree.n and np.array_equal(back.t, tree.t) and np.array_equal(back.v, tree.v)
    assert np.array_equal(back.x0, tree.x0) and np.array_equal(back.zeta, tree.zeta)
    if tree.n:
        assert tree.parent().n == tree.n - 1
        assert tree.final_marker[0] == tree.tau
    else:
        assert tree.tau == 0.0 and tree.final_marker is None


def test_tree_invariants_enforced():
    tree = _tree(2)
    with pytest.raises(ValueError):
        tree.append(0.1, 0.5, 0.0, [0, 0, 0])
    bad = MarkedTree(np.zeros(3), np.zeros(3), [0.1], [6.0], [0.0], [[0, 0, 0]])
    with pytest.raises(ValueError):
        bad.check(R=5.0)
    with pytest.raises(ValueError):
        MarkedTree(np.zeros(3), np.zeros(3)).parent()


def _run(bg, x0, v0, T=0.8, eps=EPS, pot=None):
    cfg = SimConfig(epsilon=eps, N=bg.n, T=T, integrator_tol=1e-11)
    p = pot or pt.truncate(pt.make_power_law(4), cfg.R)
    return cfg, p, run_trajectory(cfg, bg, x0, v0, p)


def test_collision_free_tree_is_root_only_and_good():
    bg = Background(np.zeros((0, 3)), np.zeros((0, 3)))
    cfg, p, tr = _run(bg, np.array([0.1, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]))
    tree = extract_tree(tr, cfg)
    assert tree.n == 0
    cls = classify(tree, cfg, tr, bg)
    assert cls.good_dynamics and cls.good_tree and cls.in_R_eps is (cfg.r_restriction >= 0 or tree.n == 0)
    assert measure_excluded(cfg, [cls]).fractions["not_good_tree"] == 0.0


def test_head_on_encounter_node():
    v_bg = np.array([-0.3, 0.0, 0.0])
    bg = Background(np.array([[0.5, 0.5, 0.5]]), v_bg[None])
    cfg, p, tr = _run(bg, np.array([0.2, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), T=0.4)
    tree = extract_tree(tr, cfg)
    assert tree.n == 1 and tree.r[0] < 1e-6
    assert np.array_equal(tree.v[0], v_bg)


def test_two_scatterer_round_trip():
    cfg0 = SimConfig(epsilon=EPS, N=2, T=1.0)
    bg = Background(np.array([[0.35, 0.5 + 0.9 * cfg0.R * EPS, 0.5], [0.65, 0.5, 0.5]]), np.zeros((2, 3)))
    cfg, p, tr = _run(bg, np.array([0.1, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]))
    tree = extract_tree(tr, cfg)
    assert tree.n == 2 and tree.t[0] < tree.t[1]
    _, v, _ = replay(tree, p, cfg.T)
    assert np.abs(v - tr.v[-1]).max() < 1e-4


def test_engineered_recollision_is_flagged():
    # free motion on the torus along x returns to the same background particle after unit time
    bg = Background(np.array([[0.5, 0.5 + 0.3 * SimConfig(epsilon=EPS).R * EPS, 0.5]]), np.zeros((1, 3)))
    cfg, p, tr = _run(bg, np.array([0.2, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), T=1.6,
                      pot=pt.truncate(pt.make_zero(), SimConfig(epsilon=EPS).R))
    assert [e.j for e in tr.events] == [0, 0]
    cls = classify(extract_tree(tr, cfg), cfg, tr, bg)
    assert not cls.dynamics_flags["recollision_free"] and not cls.good_dynamics and not cls.good_tree


def test_restricted_set_rejects_impact_parameter_at_R():
    cfg = SimConfig(epsilon=1e-4, T=1.0)
    assert 0 < cfg.r_restriction < cfg.R
    v0, vb = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.5, 0.0])
    mk = lambda r: MarkedTree(np.full(3, 0.5), v0, [0.5], [r], [0.0], [vb])
    edge = classify(mk(cfg.R - 1e-9), cfg, v_before=v0[None])
    inner = classify(mk(1.0), cfg, v_before=v0[None])
    assert edge.good_tree and not edge.in_R_eps
    assert inner.good_tree and inner.in_R_eps


def test_classification_nesting_and_zero_density():
    cfg = SimConfig(epsilon=0.1, T=0.5)
    p = pt.truncate(pt.make_stretched_exponential(), cfg.R)
    rng = np.random.default_rng(4)
    g = VelocityDensity("maxwellian")
    classes = []
    for i in range(6):
        x0 = rng.random(3)
        bg = sample_background(cfg, g, rng, exclusion=x0)
        tr = run_trajectory(cfg, bg, x0, rng.standard_normal(3), p)
        c = classify(extract_tree(tr, cfg), cfg, tr, bg)
        assert (not c.good_tree) or c.good_dynamics
        assert (not c.in_R_eps) or c.good_tree
        classes.append(c)
    rep = measure_excluded(cfg, classes)
    assert rep.fractions["not_good_dynamics"] <= rep.fractions["not_good_tree"] <= rep.fractions["not_R_eps"]
    # N = 0: every tree is trivially good
    cfg0 = SimConfig(epsilon=0.1, N=0, T=0.5)
    empty = Background(np.zeros((0, 3)), np.zeros((0, 3)))
    tr = run_trajectory(cfg0, empty, np.full(3, 0.5), np.array([1.0, 0.0, 0.0]), p)
    assert classify(extract_tree(tr, cfg0), cfg0, tr, empty).good_tree


def test_overlap_strict_mode():
    cfg0 = SimConfig(epsilon=EPS)
    d = 0.3 * cfg0.R * EPS
    bg = Background(np.array([[0.5, 0.5 + d, 0.5], [0.5, 0.5 - d, 0.5]]), np.zeros((2, 3)))
    cfg, p, tr = _run(bg, np.array([0.2, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), T=0.5,
                      pot=pt.truncate(pt.make_zero(), cfg0.R))
    tree = extract_tree(tr, cfg)
    assert tree.flags["overlap"]
    with pytest.raises(OverlapError):
        extract_tree(tr, cfg, strict=True)


def test_lemma_bound_decreases_with_eps():
    vals = [lemma_bound(SimConfig(epsilon=e)) for e in (1e-3, 1e-4, 1e-5, 1e-6)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
