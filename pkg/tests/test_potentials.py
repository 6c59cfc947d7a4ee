import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from raylbe import potentials as pt
from raylbe.potentials import cutoff_profile


def test_power_law_values():
    p = pt.make_power_law(4)
    assert p.psi(np.array([1.0]))[0] == 1.0
    assert p.dpsi(np.array([1.0]))[0] == -4.0
    assert p.psi(np.array([2.0]))[0] == 1 / 16
    assert (p.rho1, p.rho2) == (4.0, 1.0)


def test_power_law_small_radius_condition_arithmetic():
    p = pt.make_power_law(3)
    val = p.dpsi(np.array([0.5]))[0] + p.psi(np.array([0.5]))[0]
    assert val == pytest.approx(-40.0, rel=1e-14)


@pytest.mark.parametrize("s", [2.0, 1.5, -1.0])
def test_power_law_rejects_small_exponent(s):
    with pytest.raises(ValueError):
        pt.make_power_law(s)


def test_stretched_exponential_force_decay_and_tail_energy():
    p = pt.make_stretched_exponential(1.0, 1.0)
    rho = 2 * p.rho2
    assert -p.dpsi(np.array([rho]))[0] <= math.exp(-rho ** 2.5) * (1 + 1e-12)
    assert -p.dpsi(np.array([rho]))[0] == pytest.approx(math.exp(-rho ** 2.5), rel=1e-12)
    assert p.psi(np.array([10.0]))[0] < p.psi(np.array([5.0]))[0]
    # oracle: adaptive quadrature of the force tail, cross-checked by Simpson at two step sizes
    assert p.psi(np.array([p.rho2]))[0] == pytest.approx(0.10600486409361387, abs=1e-10)


@pytest.mark.parametrize("c,gamma", [(1.0, 0.0), (0.0, 1.0), (-1.0, 1.0)])
def test_stretched_exponential_rejects_bad_parameters(c, gamma):
    with pytest.raises(ValueError):
        pt.make_stretched_exponential(c, gamma)


def test_truncation_plateaus_and_sup():
    for base in (pt.make_power_law(4), pt.make_stretched_exponential()):
        R = 6.0
        pR = pt.truncate(base, R)
        inner = np.geomspace(0.05, R - 1, 200)
        assert np.array_equal(pR.psi(inner), base.psi(inner))
        outer = np.linspace(R, 3 * R, 50)
        assert np.all(pR.psi(outer) == 0.0)
        assert np.all(pR.dpsi(outer) == 0.0)
        seam = np.linspace(R - 1, R, 400)
        assert np.abs(pR.psi(seam)).max() <= base.psi(np.array([R - 1]))[0]


def test_truncate_rejects_small_radius_and_double_truncation():
    p = pt.make_power_law(4)
    with pytest.raises(ValueError):
        pt.truncate(p, 1.0)
    with pytest.raises(ValueError):
        pt.truncate(pt.truncate(p, 5.0), 4.0)


def test_cutoff_profile_is_c2_and_monotone():
    u = np.linspace(-0.5, 1.5, 4001)
    R = 1.0
    lam = cutoff_profile(u, R)  # transition on [R - 1, R] = [0, 1]
    assert np.all((lam >= 0) & (lam <= 1))
    assert np.all(lam[u <= 0] == 1) and np.all(lam[u >= 1] == 0)
    assert np.all(np.diff(lam[(u > 0) & (u < 1)]) < 0)
    # first and second derivatives vanish at both seams (quintic smoothstep)
    h = 1e-4
    for s in (0.0, 1.0):
        d1 = (cutoff_profile(s + h, R) - cutoff_profile(s - h, R)) / (2 * h)
        d2 = (cutoff_profile(s + h, R) - 2 * cutoff_profile(s, R) + cutoff_profile(s - h, R)) / h ** 2
        assert abs(d1) < 1e-6 and abs(d2) < 1e-3


def test_truncated_potential_c2_across_seams():
    R = 6.0
    pR = pt.truncate(pt.make_power_law(4), R)
    h = 1e-5
    for s in (R - 1, R):
        left = pR.dpsi(np.array([s - h]))[0]
        right = pR.dpsi(np.array([s + h]))[0]
        assert abs(left - right) < 1e-7
        dd = lambda x: (pR.dpsi(np.array([x + h]))[0] - pR.dpsi(np.array([x - h]))[0]) / (2 * h)
        assert abs(dd(s - 2 * h) - dd(s + 2 * h)) < 1e-3


@pytest.mark.parametrize("make", [lambda: pt.make_power_law(4), lambda: pt.make_stretched_exponential(),
                                  lambda: pt.truncate(pt.make_stretched_exponential(), 5.0)])
def test_force_matches_central_difference(make):
    p = make()
    rho = np.geomspace(0.2, 3.5, 300)
    if p.cutoff is not None:
        rho = rho[np.abs(rho - (p.cutoff - 1)) > 1e-3]
    rho = rho[np.abs(rho - p.rho2 / 2) > 1e-3]
    rho = rho[np.abs(rho - p.rho2) > 1e-3]
    h = 1e-6 * rho
    fd = (p.psi(rho + h) - p.psi(rho - h)) / (2 * h)
    assert np.allclose(fd, p.dpsi(rho), rtol=1e-6, atol=1e-12)


@given(st.floats(2.5, 30.0), st.floats(0.5, 30.0))
def test_monotone_cutoff_ordering(R1, dR):
    base = pt.make_stretched_exponential()
    a, b = pt.truncate(base, R1), pt.truncate(base, R1 + dR)
    rho = np.linspace(0.3, R1 + dR + 1, 300)
    pa, pb, p = a.psi(rho), b.psi(rho), base.psi(rho)
    assert np.all(pa <= pb + 1e-15) and np.all(pb <= p + 1e-15)


def test_admissibility_report():
    rep = pt.validate_admissibility(pt.make_power_law(4))
    assert pt.admissibility_passed(rep)
    assert pt.admissibility_passed(pt.validate_admissibility(pt.make_stretched_exponential()))
    # e^{-rho} is finite at 0: blow-up condition fails
    expo = pt.make_custom(lambda r: np.exp(-r), lambda r: -np.exp(-r), s=4.0, rho1=0.0, rho2=1.0)
    names = {c.name: c.passed for c in pt.validate_admissibility(expo)}
    assert names["blows_up_at_zero"] is False
    # 1/rho claimed to decay like rho^-4: decay checks fail, first at or beyond 2 rho2
    coul = pt.make_custom(lambda r: 1 / r, lambda r: -1 / r ** 2, s=4.0, rho1=1.0, rho2=1.0)
    rep = {c.name: c for c in pt.validate_admissibility(coul)}
    assert not rep["force_decay"].passed
    assert not rep["psi_decay"].passed
    assert -coul.dpsi(np.array([2.0]))[0] > 4.0 * 2.0 ** -5  # violated already at rho = 2 rho2
    with pytest.raises(ValueError):
        pt.validate_admissibility(pt.make_power_law(4), n=100)


def test_from_spec_round_trip():
    p = pt.from_spec({"kind": "power_law", "s": 4, "cutoff": 7})
    assert p.cutoff == 7.0 and p.s == 4.0
    with pytest.raises(ValueError):
        pt.from_spec({"kind": "yukawa"})
    with pytest.raises(ValueError):
        pt.from_spec({"kind": "power_law", "s": 4, "bogus": 1})
