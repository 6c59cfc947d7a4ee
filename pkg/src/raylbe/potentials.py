"""Radial repulsive potentials, their smooth truncation and an admissibility
report.

A potential is a radial profile psi(rho) in microscopic units.  The built-in
families (zero, inverse power, stretched exponential) are packed into a
float vector understood by the compiled kernels; anything else is carried
as a pair of vectorised Python callables and handled by the pure-Python
kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from . import _pycore
from ._backend import core

ZERO, POWER, STRETCHED = 0, 1, 2
KIND_IDS = {"zero": ZERO, "power_law": POWER, "stretched_exp": STRETCHED}


def cutoff_profile(rho, R):
    """Quintic C2 step: 1 for rho <= R-1, 0 for rho >= R."""
    return _pycore.smooth_down(np.asarray(rho, dtype=float) - (R - 1.0))


def cutoff_profile_d(rho, R):
    return _pycore.smooth_down_d(np.asarray(rho, dtype=float) - (R - 1.0))


@dataclass(frozen=True)
class CutoffProfile:
    R: float

    def __call__(self, rho):
        return cutoff_profile(rho, self.R)

    def derivative(self, rho):
        return cutoff_profile_d(rho, self.R)


@dataclass(frozen=True)
class RadialPotential:
    """psi(rho) with admissibility metadata.

    ``s`` is the algebraic decay exponent (psi <= rho^-s beyond rho2),
    ``gamma`` the stretched-exponential exponent (0 when not applicable),
    ``rho1`` the radius below which psi' + psi <= 0 and ``cutoff`` an
    optional truncation radius R.
    """

    kind: str
    s: float
    gamma: float = 0.0
    rho1: float = 0.0
    rho2: float = 1.0
    cutoff: Optional[float] = None
    params: dict = field(default_factory=dict)
    custom_psi: Optional[Callable] = field(default=None, repr=False, compare=False)
    custom_dpsi: Optional[Callable] = field(default=None, repr=False, compare=False)

    # -- evaluation ---------------------------------------------------------
    @property
    def kernel(self):
        """Packed float vector for built-in kinds, evaluator object otherwise."""
        if self.kind in KIND_IDS:
            return pack(self)
        return _CustomEval(self)

    @property
    def compiled(self):
        return self.kind in KIND_IDS

    def psi(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.compiled:
            return core.psi_array(pack(self), rho)
        return _CustomEval(self).psi(rho)

    def dpsi(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.compiled:
            return core.dpsi_array(pack(self), rho)
        return _CustomEval(self).dpsi(rho)

    def force_range(self, threshold=1e-16):
        """Smallest radius beyond which |psi'| stays below threshold."""
        if self.kind == "zero":
            return 0.0
        if self.cutoff is not None:
            return float(self.cutoff)
        if self.kind == "power_law":
            return (threshold / self.s) ** (-1.0 / (self.s + 1.0))
        if self.kind == "stretched_exp":
            c, P = self.params["rate"], self.params["prefactor"]
            a = 1.5 + self.gamma
            return max(self.rho2, (math.log(P / threshold) / c) ** (1.0 / a))
        # geometric scan for custom profiles
        rho = np.geomspace(1e-3, 1e8, 4000)
        f = np.abs(self.dpsi(rho))
        above = np.nonzero(f >= threshold)[0]
        return float(rho[above[-1] + 1]) if len(above) and above[-1] + 1 < len(rho) else float(rho[-1])

    @property
    def is_zero(self):
        return self.kind == "zero"

    def describe(self):
        out = {"kind": self.kind, "s": self.s, "gamma": self.gamma, "rho1": self.rho1,
               "rho2": self.rho2, "cutoff": self.cutoff}
        out.update(self.params)
        return out


class _CustomEval:
    """Adapter handing a custom potential to the pure-Python kernels."""

    def __init__(self, pot: RadialPotential):
        self._p = pot
        self.R = pot.cutoff or 0.0
        self.is_zero = False
        self.seams = ()

    def psi(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.asarray(self._p.custom_psi(rho), dtype=float)
        if self.R > 0:
            out = cutoff_profile(rho, self.R) * out
        return out

    def dpsi(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.asarray(self._p.custom_dpsi(rho), dtype=float)
        if self.R > 0:
            out = (cutoff_profile(rho, self.R) * out
                   + cutoff_profile_d(rho, self.R) * np.asarray(self._p.custom_psi(rho), dtype=float))
        return out


def pack(p: RadialPotential) -> np.ndarray:
    """Parameter vector layout: kind, s, A, c, a, rho2, R, K, prefactor."""
    out = np.zeros(9)
    out[0] = KIND_IDS[p.kind]
    out[1] = p.s
    out[5] = p.rho2
    out[6] = p.cutoff or 0.0
    if p.kind == "stretched_exp":
        out[2] = p.params["core_amplitude"]
        out[3] = p.params["rate"]
        out[4] = 1.5 + p.gamma
        out[7] = p.params["tail_norm"]
        out[8] = p.params["prefactor"]
    return out


# ---------------------------------------------------------------- factories

def make_zero() -> RadialPotential:
    """Free motion; used for diagnostics and exactness checks."""
    return RadialPotential(kind="zero", s=math.inf, rho1=0.0, rho2=0.0)


def make_power_law(s: float) -> RadialPotential:
    if not s > 2:
        raise ValueError(f"power-law exponent must exceed 2, got {s}")
    return RadialPotential(kind="power_law", s=float(s), rho1=float(s), rho2=1.0)


def make_stretched_exponential(c: float = 1.0, gamma: float = 1.0, *, prefactor: Optional[float] = None,
                               rho2: float = 1.0, s: float = 4.0) -> RadialPotential:
    """Force P*exp(-c*rho^(3/2+gamma)) beyond rho2 with an A/rho^3 core below rho2/2.

    The tail energy is the exact antiderivative
        psi(rho) = P c^(-1/a) Gamma(1/a)/a * Q(1/a, c rho^a),  a = 3/2 + gamma,
    with Q the regularised upper incomplete gamma function.  The core
    amplitude is A = psi_tail(0) * rho2^3, which keeps the C2 blend on
    [rho2/2, rho2] strictly decreasing.
    """
    if not c > 0:
        raise ValueError(f"rate must be positive, got {c}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not rho2 > 0:
        raise ValueError(f"rho2 must be positive, got {rho2}")
    P = float(c if prefactor is None else prefactor)
    if not P > 0:
        raise ValueError(f"prefactor must be positive, got {P}")
    a = 1.5 + gamma
    K = P * c ** (-1.0 / a) * gamma_fn(1.0 / a) / a
    params = {"rate": float(c), "prefactor": P, "tail_norm": float(K),
              "core_amplitude": float(K * rho2 ** 3)}
    pot = RadialPotential(kind="stretched_exp", s=float(s), gamma=float(gamma), rho1=3.0,
                          rho2=float(rho2), params=params)
    # condition psi' + psi <= 0 holds on (0, 3) for the pure core; verify the
    # blend and fall back to the core-only radius otherwise
    rho = np.geomspace(1e-3, 3.0, 2000, endpoint=False)
    if np.any(pot.dpsi(rho) + pot.psi(rho) > 0):
        pot = replace(pot, rho1=min(3.0, 0.5 * rho2))
    return pot


def make_custom(psi: Callable, dpsi: Callable, *, s: float, rho1: float = 0.0, rho2: float = 1.0,
                gamma: float = 0.0, name: str = "custom") -> RadialPotential:
    """Wraps vectorised callables; evaluated by the pure-Python kernels."""
    return RadialPotential(kind=name if name not in KIND_IDS else "custom", s=float(s), gamma=gamma,
                           rho1=rho1, rho2=rho2, custom_psi=psi, custom_dpsi=dpsi)


def truncate(p: RadialPotential, R: float) -> RadialPotential:
    """phi^R = Lambda^R * phi with the quintic profile on [R-1, R].

    R > 1 is required so that the plateau region is non-empty.
    """
    if p.cutoff is not None:
        raise ValueError("potential is already truncated")
    if not R > 1:
        raise ValueError(f"truncation radius must exceed 1, got {R}")
    return replace(p, cutoff=float(R))


def untruncated(p: RadialPotential) -> RadialPotential:
    return replace(p, cutoff=None)


def from_spec(spec: dict) -> RadialPotential:
    """Build from a config mapping {kind, ...parameters, cutoff?}."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    cutoff = spec.pop("cutoff", None)
    if kind == "power_law":
        pot = make_power_law(float(spec.pop("s")))
    elif kind == "stretched_exp":
        pot = make_stretched_exponential(
            c=float(spec.pop("rate", spec.pop("c", 1.0))), gamma=float(spec.pop("gamma", 1.0)),
            prefactor=spec.pop("prefactor", None), rho2=float(spec.pop("rho2", 1.0)),
            s=float(spec.pop("s", 4.0)))
    elif kind == "zero":
        pot = make_zero()
    else:
        raise ValueError(f"unknown potential kind {kind!r}")
    if spec:
        raise ValueError(f"unknown potential parameters {sorted(spec)}")
    if cutoff is not None:
        pot = truncate(pot, float(cutoff))
    return pot


# ---------------------------------------------------------------- admissibility

@dataclass
class ConditionResult:
    name: str
    passed: bool
    worst_rho: Optional[float] = None
    worst_value: Optional[float] = None
    note: str = ""


def validate_admissibility(p: RadialPotential, rho_max: float = 100.0, n: int = 2000,
                           rho_min: float = 1e-4) -> list[ConditionResult]:
    """Sampled check of radial admissibility and the decay hypotheses.

    Returns one entry per condition: decreasing, vanishes at infinity,
    blows up at zero, psi'+psi <= 0 on (0, rho1), decay of psi and of the
    force beyond rho2.  Failures are entries, never exceptions.
    """
    if n < 1000:
        raise ValueError("grid needs at least 1000 points")
    rho = np.geomspace(rho_min, rho_max, n)
    with np.errstate(all="ignore"):
        psi = np.asarray(p.psi(rho), dtype=float)
        dpsi = np.asarray(p.dpsi(rho), dtype=float)
    out = []

    inc = np.diff(psi)
    # skip samples where psi has underflowed to zero, and beyond R for the
    # truncated profile, which is identically zero there
    mask = psi[1:] > 0
    if p.cutoff is not None:
        mask &= rho[1:] < p.cutoff
    inc = np.where(mask, inc, -1.0)
    i = int(np.argmax(inc))
    out.append(ConditionResult("decreasing", bool(inc[i] < 0), float(rho[i + 1]), float(inc[i])))

    far = np.geomspace(rho_max, rho_max * 1e6, 7)
    with np.errstate(all="ignore"):
        far_psi = np.abs(np.asarray(p.psi(far), dtype=float))
    ok = bool(np.all(np.diff(far_psi) <= 0) and far_psi[-1] < 1e-6)
    out.append(ConditionResult("vanishes_at_infinity", ok, float(far[-1]), float(far_psi[-1])))

    near = np.geomspace(1e-2, 1e-10, 9)
    with np.errstate(all="ignore"):
        near_psi = np.asarray(p.psi(near), dtype=float)
    ok = bool(np.all(np.diff(near_psi) > 0) and near_psi[-1] > 1e6)
    out.append(ConditionResult("blows_up_at_zero", ok, float(near[-1]), float(near_psi[-1])))

    m = rho < p.rho1
    if m.any():
        val = (dpsi + psi)[m]
        j = int(np.argmax(val))
        out.append(ConditionResult("small_radius_condition", bool(val[j] <= 0), float(rho[m][j]),
                                   float(val[j])))
    else:
        out.append(ConditionResult("small_radius_condition", False, note="rho1 is not positive"))

    m = rho > p.rho2
    if p.cutoff is None and m.any() and np.isfinite(p.s):
        excess = psi[m] - rho[m] ** -p.s
        j = int(np.argmax(excess))
        out.append(ConditionResult("psi_decay", bool(excess[j] <= 1e-15), float(rho[m][j]),
                                   float(excess[j])))
        if p.kind == "stretched_exp" or p.gamma > 0:
            c = p.params.get("rate", 1.0)
            P = p.params.get("prefactor", c)
            bound = P * np.exp(-c * rho[m] ** (1.5 + p.gamma))
        else:
            bound = p.s * rho[m] ** (-p.s - 1.0)
        rel = -dpsi[m] - bound * (1.0 + 1e-12)
        j = int(np.argmax(rel))
        out.append(ConditionResult("force_decay", bool(rel[j] <= 0.0), float(rho[m][j]), float(rel[j])))
    return out


def admissibility_passed(report) -> bool:
    return all(r.passed for r in report)
