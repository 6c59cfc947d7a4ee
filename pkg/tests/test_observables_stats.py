import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from raylbe._stats import jackknife_mean, slope_ci, wilson_interval
from raylbe.errors import ConfigError
from raylbe.observables import PhaseBinning, TestFunction, test_function as make_test_function


def _numeric_grad_sup(h, vmax):
    # brute-force sup |grad h| along a ray; every supported h is radial about its centre
    r = np.linspace(0.0, vmax, 200_001)
    c = np.asarray(h.center)
    v = c + r[:, None] * np.array([1.0, 0.0, 0.0])
    vals = h.of_v(v)
    return float(np.max(np.abs(np.diff(vals)) / np.diff(r)))


@given(st.floats(0.2, 3.0))
def test_bump_gradient_bound(width):
    h = TestFunction("gaussian_bump", center=(0.3, -0.2, 1.0), width=width)
    assert _numeric_grad_sup(h, 8 * width) == pytest.approx(h.grad_bound(), rel=1e-6)


@given(st.integers(1, 6), st.floats(0.5, 4.0))
def test_poly_cutoff_gradient_bound(k, a):
    h = TestFunction("poly_cutoff", degree=k, radius=a)
    assert _numeric_grad_sup(h, a) == pytest.approx(h.grad_bound(), rel=1e-4)


def test_indicator_has_no_gradient_bound():
    h = TestFunction("indicator")
    assert h.grad_bound() == math.inf
    assert list(h.of_v([[0, 0, 0], [2, 0, 0]])) == [1.0, 0.0]


def test_test_function_specs():
    h = make_test_function({"kind": "gaussian_bump", "center": [1, 0, 0], "width": 0.7})
    assert h.label() == "bump(1,0,0;0.7)"
    assert make_test_function({"kind": "poly_cutoff", "name": "p"}).label() == "p"
    for bad in ({"kind": "sine"}, {"kind": "gaussian_bump", "width": -1},
                {"kind": "poly_cutoff", "degree": 0}, {"kind": "gaussian_bump", "colour": 1}):
        with pytest.raises(ConfigError):
            make_test_function(bad)


@given(st.integers(1, 4), st.integers(1, 6), st.sampled_from(["cube", "shells"]))
def test_binning_index_range(nx, nv, mode):
    b = PhaseBinning(nx, nv, 3.0, mode)
    rng = np.random.default_rng(nx * 100 + nv)
    x = 3 * rng.standard_normal((500, 3))
    v = 2.5 * rng.standard_normal((500, 3))
    idx = b.index(x, v)
    assert idx.min() >= 0 and idx.max() < b.n_bins
    fast = np.linalg.norm(v, axis=1) > 3.0
    assert np.all(idx[fast] == b.n_bins - 1)
    assert np.all(idx[~fast] < b.n_bins - 1)
    assert b.histogram(x, v).sum() == pytest.approx(1.0)


def test_binning_edges_and_validation():
    b = PhaseBinning(2, 4, 4.0, "shells")
    # x wraps onto the torus, speed 3.999 is the last shell, 4.0 is still inside the ball
    assert b.index([[1.75, 0.0, 0.0]], [[3.999, 0, 0]])[0] == (1 * 2 * 2) * 4 + 3
    assert b.index([[0, 0, 0]], [[4.0, 0, 0]])[0] == 3
    with pytest.raises(ValueError):
        PhaseBinning(mode="sphere")
    with pytest.raises(ValueError):
        PhaseBinning(0, 4)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-15) and 0.03 < hi < 0.04
    assert wilson_interval(0, 0) == (0.0, 1.0)
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(1 - hi) and lo < 0.5 < hi


def test_wilson_coverage():
    rng = np.random.default_rng(1)
    k = rng.binomial(200, 0.07, 2000)
    cover = np.mean([lo <= 0.07 <= hi for lo, hi in (wilson_interval(int(j), 200) for j in k)])
    assert 0.92 < cover < 0.98


def test_jackknife_matches_plain_error_for_iid_data():
    x = np.random.default_rng(2).standard_normal(20_000)
    m, se = jackknife_mean(x)
    assert m == pytest.approx(x.mean())
    assert se == pytest.approx(x.std() / math.sqrt(len(x)), rel=0.4)
    m2, se2 = jackknife_mean(np.c_[x, 2 * x])
    assert se2[1] == pytest.approx(2 * se2[0])
    assert np.isnan(jackknife_mean([1.0])[1])


def test_slope_ci():
    t = np.linspace(0, 1, 50)
    y = 2.0 * t + np.random.default_rng(3).normal(0, 0.01, 50)
    slope, (lo, hi) = slope_ci(t, y)
    assert lo < 2.0 < hi and hi - lo < 0.05
    assert slope == pytest.approx(stats.linregress(t, y).slope)
