"""Desk-scale comparison of the three levels of description.

density_distance   binned total variation and weak gaps between two ensembles
operator_gap       Monte Carlo weak forms of the cutoff and long-range collision operators
c1_formula         the explicit operator-difference constant C1(R) (with C = 1), and C2
divergence_sweep   long-range vs truncated MD over an epsilon grid
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from . import scattering as sc
from ._stats import wilson_interval
from .densities import InitialDensity, VelocityDensity
from .dynamics import divergence, sample_background
from .config import SimConfig
from .errors import NumericalError
from .observables import PhaseBinning, TestFunction
from .potentials import RadialPotential, truncate, untruncated
from .rng import stream


# ---------------------------------------------------------------- distances

@dataclass
class DistanceReport:
    tv_binned: float
    tv_ci: tuple
    tv_count: Optional[float]
    weak_gaps: list  # (label, |<fA - fB, h>|, combined stderr)
    metadata: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {"tv_binned": self.tv_binned, "tv_ci": list(self.tv_ci), "tv_count": self.tv_count,
                "weak_gaps": [list(g) for g in self.weak_gaps], "metadata": self.metadata,
                "warnings": self.warnings,
                "note": "TV on a fixed phase-space binning and on the collision-count marginal, "
                        "standing in for TV on tree space"}


def tv_distance(pa, pb) -> float:
    return 0.5 * float(np.abs(np.asarray(pa) - np.asarray(pb)).sum())


def density_distance(xa, va, xb, vb, binning: PhaseBinning, tests: Sequence[TestFunction] = (),
                     counts_a=None, counts_b=None, n_boot: int = 200, rng=None,
                     metadata: Optional[dict] = None, min_samples: int = 1000) -> DistanceReport:
    """Binned TV (with a percentile bootstrap interval) and weak gaps between ensembles A and B."""
    na, nb = len(xa), len(xb)
    if min(na, nb) < min_samples:
        raise ValueError(f"need at least {min_samples} samples per ensemble, got {na} and {nb}")
    ia, ib = binning.index(xa, va), binning.index(xb, vb)
    ca = np.bincount(ia, minlength=binning.n_bins)
    cb = np.bincount(ib, minlength=binning.n_bins)
    tv = tv_distance(ca / na, cb / nb)
    msgs = []
    occ = (ca + cb) > 0
    sparse = np.sum(np.minimum(ca, cb)[occ] < 5) / max(int(occ.sum()), 1)
    if sparse > 0.10:
        msgs.append(f"bin occupancy < 5 in {100 * sparse:.0f}% of occupied bins: TV estimate is biased upward")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=2)
    ci = (tv, tv)
    if n_boot > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        boots = np.empty(n_boot)
        pa, pb = ca / na, cb / nb
        for k in range(n_boot):
            boots[k] = tv_distance(rng.multinomial(na, pa) / na, rng.multinomial(nb, pb) / nb)
        # basic (reflected) bootstrap interval: the plug-in TV is biased upward
        ci = (max(0.0, float(2 * tv - np.quantile(boots, 0.975))), min(1.0, float(2 * tv - np.quantile(boots, 0.025))))
    tv_count = None
    if counts_a is not None and counts_b is not None:
        top = int(max(np.max(counts_a), np.max(counts_b))) + 1
        tv_count = tv_distance(np.bincount(counts_a, minlength=top) / na, np.bincount(counts_b, minlength=top) / nb)
    gaps = []
    for h in tests:
        ha, hb = h(xa, va), h(xb, vb)
        se = math.sqrt(ha.var(ddof=1) / na + hb.var(ddof=1) / nb)
        gaps.append((h.label(), float(abs(ha.mean() - hb.mean())), float(se)))
    meta = {"n_a": na, "n_b": nb, "bins": binning.n_bins}
    meta.update(binning.spec())
    meta.update(metadata or {})
    return DistanceReport(tv, ci, tv_count, gaps, meta, msgs)


# ---------------------------------------------------------------- operator estimates

def c1_formula(R: float, s: float, g_second_moment: float = 1.0) -> dict:
    """Five-term C1(R) with C = 1 and eta = 1/log R, times int (1+|v*|^2) g.

    ``g_second_moment`` is int (1 + |v*|^2) g dv*.
    """
    if s <= 2:
        raise ValueError("need s > 2")
    if R <= math.e:
        raise ValueError("need R > e so that eta = 1/log R < 1")
    L = math.log(R)
    eta = 1.0 / L
    A = R - 1.0 - 1.0 / eta
    if A > 0:
        t1, _ = integrate.quad(lambda r: r * sc.kappa(r, R, s), 0.0, A, epsabs=0, epsrel=1e-12, limit=200)
        t1 /= eta ** 2
    else:
        t1 = 0.0
    lo = max(A, 0.0)
    t2 = grazing_tail(lo, eta, s)
    t3 = 1.0 / (R ** (s - 1.5) * L ** 3.5)
    # int_0^{R-1} r dr / (1 - r^2/R^2) = -(R^2/2) log(1 - (R-1)^2/R^2)
    t4 = -0.5 * R * R * math.log(1.0 - (R - 1.0) ** 2 / R ** 2) / (R ** s * L ** 3)
    t5 = power_tail_integral(s) / L ** 3
    terms = [t1, t2, t3, t4, t5]
    return {"R": R, "s": s, "eta": eta, "terms": terms, "sum": float(sum(terms)),
            "g_moment": g_second_moment, "value": float(sum(terms) * g_second_moment)}


def grazing_tail(A: float, eta: float, s: float) -> float:
    """int_A^inf r dr / (1 + eta^2 r^s); arctan closed form for s = 4."""
    if s == 4:
        return (0.5 * math.pi - math.atan(eta * A * A)) / (2.0 * eta)
    val, _ = integrate.quad(lambda r: r / (1.0 + eta * eta * r ** s), A, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    return val


def power_tail_integral(s: float) -> float:
    """int_0^inf r dr / (1 + r^s) = (pi/s) / sin(2 pi/s)."""
    return (math.pi / s) / math.sin(2 * math.pi / s)


def c2_formula(s: float, g_second_moment: float = 1.0) -> float:
    return g_second_moment * power_tail_integral(s)


def r_max_for(eta: float, s: float, grad_h: float, mean_w: float, budget: float = 1e-10) -> float:
    """Radius beyond which the grazing bound contributes less than ``budget``:
    2 pi grad_h mean_w r^(2-s) / (eta^2 (s-2)) = budget."""
    return (2 * math.pi * grad_h * mean_w / (eta * eta * (s - 2) * budget)) ** (1.0 / (s - 2))


@dataclass
class OperatorGap:
    R_values: list
    weak_R: np.ndarray          # <L^R f, h> per R
    weak_R_se: np.ndarray
    weak_long: float            # <L f, h>
    weak_long_se: float
    gap: np.ndarray             # <L^R f - L f, h>
    gap_se: np.ndarray
    c1: list
    c2: float
    c2_empirical: np.ndarray    # |<L^R f, h>| / (grad_h * m2)
    grad_h: float
    m2_f: float
    r_max: float
    samples: int
    diagnostics: dict = field(default_factory=dict)

    def bound(self, i):
        return self.c1[i]["value"] * self.grad_h * self.m2_f

    def rows(self):
        return [{"R": R, "weak_R": float(self.weak_R[i]), "weak_R_se": float(self.weak_R_se[i]),
                 "weak_long": self.weak_long, "gap": float(self.gap[i]), "gap_se": float(self.gap_se[i]),
                 "c1": self.c1[i]["value"], "bound": self.bound(i), "c2": self.c2,
                 "c2_empirical": float(self.c2_empirical[i])}
                for i, R in enumerate(self.R_values)]


def _impact_sampler(rng, n, r_core, r_min, r_max):
    """Mixture of area-uniform on [0, r_core] and log-uniform on [r_min, r_max]; returns (r, 2 pi r / q(r))."""
    pick = rng.random(n) < 0.5
    u = rng.random(n)
    r = np.where(pick, r_core * np.sqrt(u), r_min * (r_max / r_min) ** u)
    q = 0.5 * np.where(r < r_core, 2 * r / r_core ** 2, 0.0)
    q = q + 0.5 * np.where((r > r_min) & (r < r_max), 1.0 / (r * math.log(r_max / r_min)), 0.0)
    return r, 2 * math.pi * r / q


def operator_gap(v_f, g: VelocityDensity, p: RadialPotential, R_values: Sequence[float], h: TestFunction,
                 mc_samples: int, seed: int = 0, tol: float = 1e-9, kinematics: str = "symmetric",
                 r_max: Optional[float] = None, chunk: int = 50_000) -> OperatorGap:
    """Monte Carlo weak forms <L^R f, h> (for each R) and <L f, h> with common random numbers.

    Each sample draws v from the f-ensemble, v* ~ g, zeta uniform and r from a
    fixed importance density on [0, r_max]; the integrand is
    |w| (h(v') - h(v)) * 2 pi r / q(r).  The same draws serve every R, so the
    differences have small variance.
    """
    p = untruncated(p)
    v_f = np.atleast_2d(np.asarray(v_f, dtype=float))
    if not np.isfinite(p.s) or p.s <= 2:
        raise ValueError("operator estimates need a potential with decay exponent s > 2")
    m2 = float(np.mean(1.0 + np.einsum("ij,ij->i", v_f, v_f)))
    grad_h = h.grad_bound()
    eta = 1.0 / math.log(min(R_values))
    if r_max is None:
        mean_w = float(np.mean(g.mean_relative_speed(v_f[: min(len(v_f), 10000)])))
        r_max = r_max_for(eta, p.s, grad_h, mean_w)
    r_core = 4.0
    cut = [truncate(p, R) for R in R_values]
    rng = stream(seed, "operator", 0)
    acc_R = [[] for _ in R_values]
    acc_L = []
    n_done = 0
    max_w = 0.0
    while n_done < mc_samples:
        m = min(chunk, mc_samples - n_done)
        v = v_f[rng.integers(0, len(v_f), m)]
        vs = g.sample(rng, m)
        r, wt = _impact_sampler(rng, m, r_core, 1e-2, r_max)
        zeta = 2 * math.pi * rng.random(m)
        w = np.linalg.norm(vs - v, axis=1)
        h0 = h(None, v)
        vp, _, _ = sc.scatter_many(p, r, zeta, v, vs, tol, kinematics)
        fl = w * (h(None, vp) - h0) * wt
        acc_L.append(fl)
        for k, pc in enumerate(cut):
            vpr, _, _ = sc.scatter_many(pc, r, zeta, v, vs, tol, kinematics)
            acc_R[k].append(w * (h(None, vpr) - h0) * wt)
        max_w = max(max_w, float(np.max(np.abs(fl))))
        n_done += m
    fl = np.concatenate(acc_L)
    frs = [np.concatenate(a) for a in acc_R]
    n = len(fl)
    se = lambda a: float(a.std(ddof=1) / math.sqrt(n))
    weak_R = np.array([a.mean() for a in frs])
    weak_R_se = np.array([se(a) for a in frs])
    gaps = np.array([(a - fl).mean() for a in frs])
    gaps_se = np.array([se(a - fl) for a in frs])
    gm = 1.0 + g.second_moment()
    diag = {"max_abs_term": max_w, "mean_abs_term": float(np.mean(np.abs(fl))),
            "heavy_tail_ratio": max_w / max(float(np.sum(np.abs(fl))), 1e-300)}
    if diag["heavy_tail_ratio"] > 0.05:
        raise NumericalError("importance weights heavy-tailed", **diag)
    return OperatorGap(list(R_values), weak_R, weak_R_se, float(fl.mean()), se(fl), gaps, gaps_se,
                       [c1_formula(R, p.s, gm) for R in R_values], c2_formula(p.s, gm),
                       np.abs(weak_R) / (grad_h * m2), grad_h, m2, float(r_max), n, diag)


# ---------------------------------------------------------------- divergence sweep

@dataclass
class DivergenceRow:
    epsilon: float
    seed: int
    n: int
    matched: int
    median: float
    maximum: float
    median_ci: tuple
    differing_fraction: float
    differing_ci: tuple
    excluded_R_fraction: float
    gaps: list
    matched_gaps: list = field(default_factory=list)

    def to_dict(self):
        d = dict(self.__dict__)
        d.pop("gaps")
        d.pop("matched_gaps")
        d["median_ci"] = list(self.median_ci)
        d["differing_ci"] = list(self.differing_ci)
        return d


def median_ci(x, conf=0.95):
    """Distribution-free order-statistic interval for the median."""
    from scipy import stats

    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    if n == 0:
        return (math.nan, math.nan)
    lo = int(stats.binom.ppf((1 - conf) / 2, n, 0.5))
    hi = int(stats.binom.isf((1 - conf) / 2, n, 0.5))
    return (float(x[max(lo - 1, 0)]), float(x[min(hi, n - 1)]))


def divergence_cell(cfg: SimConfig, p: RadialPotential, g: VelocityDensity, f0: InitialDensity,
                    n_traj: int, T: Optional[float] = None) -> DivergenceRow:
    """Long-range vs truncated MD from identical data for one (epsilon, seed) cell."""
    from .trees import classify, extract_tree

    p_long = untruncated(p)
    p_short = truncate(p_long, cfg.R)
    gaps, matched_gaps = [], []
    differing = 0
    outside_R = 0
    for i in range(n_traj):
        rng = stream(cfg.seed, "tagged", i)
        x0, v0 = f0.sample(rng, 1)
        bg = sample_background(cfg, g, stream(cfg.seed, "background", i), exclusion=x0[0])
        res = divergence(cfg if T is None else _with_T(cfg, T), bg, x0[0], v0[0], p_long, p_short)
        gaps.append(res.gap)
        if res.matched:
            matched_gaps.append(res.gap)
        else:
            differing += 1
        tree = extract_tree(res.traj_short, cfg)
        if not classify(tree, cfg, res.traj_short, bg).in_R_eps:
            outside_R += 1
    med = float(np.median(matched_gaps)) if matched_gaps else math.nan
    return DivergenceRow(cfg.epsilon, cfg.seed, n_traj, len(matched_gaps), med,
                         float(np.max(matched_gaps)) if matched_gaps else math.nan,
                         median_ci(matched_gaps), differing / n_traj, wilson_interval(differing, n_traj),
                         outside_R / n_traj, gaps, matched_gaps)


def _with_T(cfg, T):
    from dataclasses import replace
    return replace(cfg, T=T)


def divergence_sweep(cfgs: Sequence[SimConfig], p: RadialPotential, g: VelocityDensity, f0: InitialDensity,
                     n_traj: int, T: Optional[float] = None) -> list:
    return [divergence_cell(c, p, g, f0, n_traj, T) for c in cfgs]


__all__ = ["DistanceReport", "density_distance", "tv_distance", "c1_formula", "c2_formula", "grazing_tail",
           "power_tail_integral", "r_max_for", "OperatorGap", "operator_gap", "DivergenceRow",
           "divergence_cell", "divergence_sweep", "median_ci"]
