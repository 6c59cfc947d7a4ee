"""Monte Carlo realisation of the cutoff linear Boltzmann equation as a jump process.

A walker moves freely on the torus and jumps at rate
nu(v) = pi R^2 E_g|v - v*|.  Jump times come from thinning against the
majorant pi R^2 (|v| + m1), where m1 = E_g|v*|: a candidate time is drawn
from the majorant, a background velocity is proposed from the mixture
g(v*) (|v| + |v*|) / (|v| + m1) and accepted with probability
|v - v*| / (|v| + |v*|).  Accepted candidates are jumps with v* distributed
as g(v*)|v - v*| / E_g|v - v*|; the impact parameter has density 2r/R^2
and the azimuth is uniform.  Each jump appends one node to the walker's
marked tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import scattering as sc
from ._stats import jackknife_mean
from .densities import InitialDensity, VelocityDensity
from .dynamics import PhaseState
from .errors import SamplingError
from .observables import PhaseBinning, TestFunction
from .potentials import RadialPotential
from .rng import stream
from .trees import MarkedTree

MAX_PROPOSALS = 1_000_000
BLOCK = 1000  # walkers per random stream; fixed so results never depend on worker count


def loss_rate(g: VelocityDensity, R: float, v) -> np.ndarray:
    """nu(v) = pi R^2 E_g|v - v*| (closed forms for every supported g)."""
    return math.pi * R * R * np.asarray(g.mean_relative_speed(v))


def loss_rate_quadrature(g: VelocityDensity, R: float, v, rtol: float = 1e-10) -> float:
    """Same rate by direct radial/angular quadrature, for cross-checks."""
    from scipy import integrate

    v = np.asarray(v, dtype=float)
    if g.kind == "point":
        return float(math.pi * R * R * np.linalg.norm(v - g.c))
    d = float(np.linalg.norm(v - g.c))
    # E|v - v*| with v* = c + s u: average |d e - s u| over directions is
    # (|d + s|^3 - |d - s|^3) / (6 d s) (d, s > 0)
    def shell(s):
        if d == 0 or s == 0:
            return max(d, s)
        return ((d + s) ** 3 - abs(d - s) ** 3) / (6.0 * d * s)

    if g.kind == "maxwellian":
        sig = g.sigma
        dens = lambda s: 4 * math.pi * s * s * (2 * math.pi * sig * sig) ** -1.5 * math.exp(-0.5 * s * s / sig / sig)
        top = 40 * sig
    else:
        a = g.radius
        dens = lambda s: 3 * s * s / a ** 3
        top = a
    pts = [d] if 0 < d < top else None
    val, _ = integrate.quad(lambda s: shell(s) * dens(s), 0, top, epsabs=0, epsrel=rtol, limit=200, points=pts)
    return float(math.pi * R * R * val)


def _propose(rng, g: VelocityDensity, speed: np.ndarray):
    """Background velocities from the mixture g (|v| + |v*|)/(|v| + m1), row-wise."""
    n = len(speed)
    m1 = g.first_moment()
    plain = rng.random(n) * (speed + m1) < speed
    out = np.empty((n, 3))
    k = int(plain.sum())
    if k:
        out[plain] = g.sample(rng, k)
    if n - k:
        out[~plain] = g.sample_size_biased(rng, n - k)
    return out


def sample_jump(rng, g: VelocityDensity, R: float, v, max_proposals: int = MAX_PROPOSALS):
    """(v*, r, zeta) with density proportional to g(v*) |v - v*| r on R^3 x [0, R]."""
    v = np.asarray(v, dtype=float)
    speed = np.array([np.linalg.norm(v)])
    tries = 0
    while True:
        batch = int(min(max(8, tries), max_proposals - tries)) or 1
        vs = _propose(rng, g, np.repeat(speed, batch))
        u = rng.random(batch)
        acc = u * (speed[0] + np.linalg.norm(vs, axis=1)) < np.linalg.norm(v - vs, axis=1)
        hit = np.nonzero(acc)[0]
        if len(hit):
            tries += int(hit[0]) + 1
            v_star = vs[hit[0]]
            break
        tries += batch
        if tries >= max_proposals:
            raise SamplingError("rejection sampler overran", proposals=tries, v=v.tolist())
    r = R * math.sqrt(rng.random())
    zeta = 2 * math.pi * rng.random()
    return v_star, r, zeta


@dataclass
class JumpWalker:
    state: PhaseState
    tree: MarkedTree
    weight: float = 1.0
    x_unwrapped: Optional[np.ndarray] = None
    t_last: float = 0.0
    v_before: list = field(default_factory=list)

    @classmethod
    def start(cls, x0, v0):
        x0 = np.asarray(x0, dtype=float)
        v0 = np.asarray(v0, dtype=float)
        return cls(PhaseState(x0, v0, 0.0), MarkedTree(x0, v0), 1.0, x0.copy(), 0.0)


@dataclass(frozen=True)
class JumpModel:
    """Everything a walker needs: truncated potential, radius, background, kinematics."""

    potential: RadialPotential
    R: float
    g: VelocityDensity
    tol: float = 1e-10
    kinematics: str = "symmetric"

    def __post_init__(self):
        if self.potential.cutoff is None or abs(self.potential.cutoff - self.R) > 1e-12 * self.R:
            raise ValueError("jump model needs the potential truncated at R")
        if self.kinematics not in sc.KINEMATICS:
            raise ValueError(f"unknown kinematics {self.kinematics!r}")

    def majorant(self, speed):
        return math.pi * self.R ** 2 * (np.asarray(speed) + self.g.first_moment())


def evolve_walker(rng, w: JumpWalker, model: JumpModel, T: float) -> JumpWalker:
    """Advance one walker to time T (in place) and return it."""
    t = w.state.t
    v = w.state.v.copy()
    x = w.x_unwrapped.copy()
    m1 = model.g.first_moment()
    while True:
        speed = float(np.linalg.norm(v))
        rate = math.pi * model.R ** 2 * (speed + m1)
        t_new = t + rng.exponential(1.0 / rate) if rate > 0 else math.inf
        if t_new >= T:
            break
        t = t_new
        vs = _propose(rng, model.g, np.array([speed]))[0]
        if rng.random() * (speed + np.linalg.norm(vs)) >= np.linalg.norm(v - vs):
            continue
        r = model.R * math.sqrt(rng.random())
        zeta = 2 * math.pi * rng.random()
        x = x + (t - w.t_last) * v
        w.t_last = t
        w.v_before.append(v.copy())
        vp, _, _ = sc.scatter_many(model.potential, np.array([r]), np.array([zeta]), v[None], vs[None],
                                   model.tol, model.kinematics)
        w.tree.append(t, r, zeta, vs)
        v = vp[0]
    w.x_unwrapped = x
    w.state = PhaseState(x + (T - w.t_last) * v, v, T)
    return w


# ---------------------------------------------------------------- blocks of walkers

@dataclass
class WalkerBlock:
    """Struct-of-arrays walkers; node records are flat arrays keyed by walker id."""

    x: np.ndarray  # unwrapped position at the last jump
    v: np.ndarray
    t_last: np.ndarray
    t: float
    x0: np.ndarray
    v0: np.ndarray
    node_id: list = field(default_factory=list)
    node_t: list = field(default_factory=list)
    node_r: list = field(default_factory=list)
    node_zeta: list = field(default_factory=list)
    node_v: list = field(default_factory=list)
    node_vb: list = field(default_factory=list)
    proposals: int = 0
    speed_sup: Optional[np.ndarray] = None

    @property
    def n(self):
        return len(self.v)

    def positions(self, t=None):
        t = self.t if t is None else t
        return np.mod(self.x + (t - self.t_last)[:, None] * self.v, 1.0)

    def nodes(self):
        if not self.node_id:
            return (np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        return (np.concatenate(self.node_id), np.concatenate(self.node_t), np.concatenate(self.node_r),
                np.concatenate(self.node_zeta), np.concatenate(self.node_v), np.concatenate(self.node_vb))

    def jump_counts(self):
        ids = self.nodes()[0]
        return np.bincount(ids, minlength=self.n)

    def trees(self):
        ids, t, r, z, v, vb = self.nodes()
        order = np.lexsort((t, ids))
        ids, t, r, z, v, vb = ids[order], t[order], r[order], z[order], v[order], vb[order]
        cuts = np.searchsorted(ids, np.arange(self.n + 1))
        out = []
        for i in range(self.n):
            a, b = cuts[i], cuts[i + 1]
            tr = MarkedTree(self.x0[i], self.v0[i], t[a:b], r[a:b], z[a:b], v[a:b] if b > a else np.zeros((0, 3)))
            tr.flags = {"v_before": vb[a:b]}
            out.append(tr)
        return out


def new_block(x0, v0) -> WalkerBlock:
    x0 = np.asarray(x0, dtype=float).reshape(-1, 3)
    v0 = np.asarray(v0, dtype=float).reshape(-1, 3)
    n = len(x0)
    return WalkerBlock(x0.copy(), v0.copy(), np.zeros(n), 0.0, x0.copy(), v0.copy(),
                       speed_sup=np.linalg.norm(v0, axis=1))


def evolve_block(rng, blk: WalkerBlock, model: JumpModel, T: float) -> WalkerBlock:
    """Advance every walker of the block from blk.t to T (vectorised thinning)."""
    n = blk.n
    m1 = model.g.first_moment()
    clock = np.full(n, blk.t)
    live = np.arange(n)
    while len(live):
        v = blk.v[live]
        speed = np.linalg.norm(v, axis=1)
        rate = math.pi * model.R ** 2 * (speed + m1)
        with np.errstate(divide="ignore"):
            dt = rng.exponential(1.0, len(live)) / rate
        cand = clock[live] + dt
        go = cand < T
        live, cand, v, speed = live[go], cand[go], v[go], speed[go]
        if not len(live):
            break
        clock[live] = cand
        blk.proposals += len(live)
        vs = _propose(rng, model.g, speed)
        u = rng.random(len(live))
        acc = u * (speed + np.linalg.norm(vs, axis=1)) < np.linalg.norm(v - vs, axis=1)
        if acc.any():
            ids = live[acc]
            k = len(ids)
            r = model.R * np.sqrt(rng.random(k))
            zeta = 2 * math.pi * rng.random(k)
            tj = cand[acc]
            vb = v[acc]
            blk.x[ids] = blk.x[ids] + (tj - blk.t_last[ids])[:, None] * vb
            blk.t_last[ids] = tj
            vp, _, _ = sc.scatter_many(model.potential, r, zeta, vb, vs[acc], model.tol, model.kinematics)
            blk.v[ids] = vp
            blk.speed_sup[ids] = np.maximum(blk.speed_sup[ids], np.linalg.norm(vp, axis=1))
            blk.node_id.append(ids)
            blk.node_t.append(tj)
            blk.node_r.append(r)
            blk.node_zeta.append(zeta)
            blk.node_v.append(vs[acc])
            blk.node_vb.append(vb)
    blk.t = float(T)
    return blk


def replay_tree(tree: MarkedTree, model: JumpModel, T: float):
    """Boltzmann dynamics of a walker tree using the same arithmetic as evolve_block.

    Returns (x(T) mod 1, v(T)).
    """
    x = tree.x0.copy()[None]
    v = tree.v0.copy()[None]
    t_last = np.zeros(1)
    for i in range(tree.n):
        tj = tree.t[i:i + 1]
        x = x + (tj - t_last)[:, None] * v
        t_last = tj
        v, _, _ = sc.scatter_many(model.potential, tree.r[i:i + 1], tree.zeta[i:i + 1], v, tree.v[i:i + 1],
                                  model.tol, model.kinematics)
    return np.mod(x + (T - t_last)[:, None] * v, 1.0)[0], v[0]


@dataclass
class Snapshot:
    t: float
    x: np.ndarray
    v: np.ndarray
    jumps: np.ndarray


def simulate(model: JumpModel, f0: InitialDensity, n_walkers: int, times: Sequence[float], seed: int,
             x0=None, v0=None, return_trees: bool = False, block: int = BLOCK):
    """Evolve n_walkers from f0 and record snapshots at the given times.

    Walkers are processed in blocks of fixed size with independent streams,
    so the output depends only on (seed, n_walkers).
    """
    times = sorted(float(t) for t in times)
    snaps = [([], [], []) for _ in times]
    trees = []
    proposals = 0
    for b, start in enumerate(range(0, n_walkers, block)):
        m = min(block, n_walkers - start)
        rng = stream(seed, "walker", b)
        if x0 is None:
            xb, vb = f0.sample(rng, m)
        else:
            xb = np.asarray(x0, dtype=float)[start:start + m]
            vb = np.asarray(v0, dtype=float)[start:start + m]
        blk = new_block(xb, vb)
        for k, t in enumerate(times):
            evolve_block(rng, blk, model, t)
            snaps[k][0].append(blk.positions())
            snaps[k][1].append(blk.v.copy())
            snaps[k][2].append(blk.jump_counts())
        proposals += blk.proposals
        if return_trees:
            trees.extend(blk.trees())
    out = [Snapshot(t, np.concatenate(s[0]), np.concatenate(s[1]), np.concatenate(s[2])) for t, s in zip(times, snaps)]
    return (out, trees, proposals) if return_trees else out


# ---------------------------------------------------------------- estimators

@dataclass
class DensityEstimate:
    t: float
    n: int
    histogram: Optional[np.ndarray]
    hist_stderr: Optional[np.ndarray]
    weak: dict

    def rows(self):
        if self.histogram is None:
            return []
        return [(i, float(p), float(s)) for i, (p, s) in enumerate(zip(self.histogram, self.hist_stderr)) if p > 0]


def estimate_density(x, v, t: float = 0.0, binning: Optional[PhaseBinning] = None,
                     tests: Sequence[TestFunction] = ()) -> DensityEstimate:
    """Histogram over a phase-space binning and weak integrals <f, h> with jackknife errors."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = len(x)
    if n < 100:
        raise ValueError("need at least 100 samples for a density estimate")
    hist = se = None
    if binning is not None:
        hist = binning.histogram(x, v)
        se = np.sqrt(hist * (1 - hist) / n)
    weak = {}
    for h in tests:
        vals = h(x, v)
        m, s = jackknife_mean(vals)
        weak[h.label()] = (float(m), float(s))
    return DensityEstimate(t, n, hist, se, weak)
