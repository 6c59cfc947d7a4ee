"""The compiled kernels and their pure-Python twins agree."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from raylbe import potentials as pt
from raylbe._backend import NAME, core, pycore

pytestmark = pytest.mark.skipif(NAME != "cython", reason="compiled extension not built")

POTS = [pt.make_power_law(4), pt.make_stretched_exponential(), pt.truncate(pt.make_power_law(4), 6.0),
        pt.truncate(pt.make_stretched_exponential(0.7, 0.5), 3.0)]


@pytest.mark.parametrize("p", POTS, ids=["power", "stretched", "power_R6", "stretched_R3"])
def test_psi_and_force_agree(p):
    rho = np.geomspace(1e-2, 20, 3000)
    k = pt.pack(p)
    for f in ("psi_array", "dpsi_array"):
        a, b = getattr(core, f)(k, rho), getattr(pycore, f)(k, rho)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-15)


@pytest.mark.parametrize("p", POTS, ids=["power", "stretched", "power_R6", "stretched_R3"])
@given(r=st.floats(0, 7), w=st.floats(0.1, 6))
def test_angles_agree(p, r, w):
    k = pt.pack(p)
    a = core.deviation_angle(k, r, w, 1e-10)
    b = pycore.deviation_angle(k, r, w, 1e-10)
    assert a[3] == b[3] == 0
    assert abs(a[0] - b[0]) < 1e-9


@given(st.floats(0.05, 20), st.floats(1e-3, 60))
def test_upper_gamma_matches_scipy(a, x):
    from scipy.special import gammaincc
    ref = gammaincc(a, x)
    got = core.gamma_q(a, x)
    assert got == pytest.approx(ref, rel=1e-11, abs=1e-300)


def test_integrate_segment_agrees(rng):
    eps = 0.05
    pR = pt.truncate(pt.make_stretched_exponential(), eps ** -0.25)
    k = pt.pack(pR)
    nb_x = 0.5 + 0.08 * (rng.random((20, 3)) - 0.5)
    nb_v = rng.standard_normal((20, 3))
    args = (k, eps, float(pR.cutoff), np.array([0.5, 0.5, 0.5]), np.array([1.0, 0.2, -0.3]), 0.0, 0.05,
            nb_x, nb_v, 0.0, 1e-10, 0.05, 200000, False, 0.0)
    a, b = core.integrate_segment(*args), pycore.integrate_segment(*args)
    assert a[4] == b[4] == 0
    assert np.abs(np.asarray(a[1])[-1] - np.asarray(b[1])[-1]).max() < 1e-8
    assert np.abs(np.asarray(a[2])[-1] - np.asarray(b[2])[-1]).max() < 1e-7


def test_pure_python_backend_selectable():
    import os
    import subprocess
    import sys
    env = dict(os.environ, RAYLBE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import raylbe; print(raylbe.backend)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
