"""Tagged particle against N straight-line background particles on the unit torus.

Equations of motion (macroscopic units):
    x' = v,  v' = -(1/eps) sum_j psi'(|d_j|/eps) d_j/|d_j|,  d_j = x - x_j(t) (minimum image),
with x_j(t) = x_j + t v_j.  The integrator is event driven: between
encounters the tagged particle moves on an exact straight line until the
first background particle reaches the interaction radius a = rho_cut*eps;
inside, an adaptive Dormand-Prince 5(4) scheme with dense output runs
against the current neighbour list until everybody has left again.

Positions inside a Trajectory are unwrapped (continuous); reduce mod 1 to
get torus coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from . import _pycore
from ._backend import core
from .config import SimConfig
from .densities import VelocityDensity
from .errors import NumericalError, StepUnderflowError, raise_for_status
from .potentials import RadialPotential

MAX_STEPS_PER_CALL = 200_000
EVENT_TIME_TOL = 1e-10
SUBSAMPLES = 8


def minimum_image(d):
    d = np.asarray(d, dtype=float)
    return d - np.rint(d)


@dataclass
class PhaseState:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.mod(np.asarray(self.x, dtype=float), 1.0)
        self.v = np.asarray(self.v, dtype=float)


@dataclass
class Background:
    x: np.ndarray  # (N, 3) positions at t = 0
    v: np.ndarray  # (N, 3)
    resampled: int = 0
    first_draw_clear: bool = True

    @property
    def n(self):
        return len(self.x)

    def positions(self, t):
        return np.mod(self.x + t * self.v, 1.0)


def sample_background(cfg: SimConfig, g: VelocityDensity, rng, exclusion=None,
                      radius: Optional[float] = None, n: Optional[int] = None) -> Background:
    """N i.i.d. uniform positions and g-distributed velocities.

    With ``exclusion`` (a torus point) every particle within ``radius``
    (default R*eps) of it is redrawn until none is; ``first_draw_clear``
    records whether the very first draw already satisfied the condition,
    whose probability is xi = (1 - 4/3 pi radius^3)^N.
    """
    n = cfg.n_background if n is None else n
    x = rng.random((n, 3))
    v = g.sample(rng, n) if n else np.zeros((0, 3))
    resampled = 0
    clear = True
    if exclusion is not None and n:
        rad = cfg.R * cfg.epsilon if radius is None else radius
        if 4.0 / 3.0 * math.pi * rad ** 3 >= 0.5:
            raise ValueError("exclusion ball must cover less than half of the torus")
        x0 = np.asarray(exclusion, dtype=float)
        bad = np.linalg.norm(minimum_image(x - x0), axis=1) <= rad
        clear = not bad.any()
        while bad.any():
            k = int(bad.sum())
            resampled += k
            x[bad] = rng.random((k, 3))
            bad = np.linalg.norm(minimum_image(x - x0), axis=1) <= rad
    return Background(x, v, resampled, clear)


# ---------------------------------------------------------------- dense output

def _hermite(t0, t1, x0, v0, a0, x1, v1, a1, t):
    """Quintic Hermite position and velocity at times t in [t0, t1]."""
    h = np.asarray(t1 - t0, dtype=float)[..., None]
    s = np.clip((np.asarray(t, dtype=float) - t0)[..., None] / h, 0.0, 1.0)
    s2, s3 = s * s, s * s * s
    s4, s5 = s3 * s, s3 * s2
    h0 = 1 - 10 * s3 + 15 * s4 - 6 * s5
    h1 = s - 6 * s3 + 8 * s4 - 3 * s5
    h2 = 0.5 * (s2 - 3 * s3 + 3 * s4 - s5)
    h3 = 10 * s3 - 15 * s4 + 6 * s5
    h4 = -4 * s3 + 7 * s4 - 3 * s5
    h5 = 0.5 * (s3 - 2 * s4 + s5)
    x = h0 * x0 + h1 * h * v0 + h2 * h * h * a0 + h3 * x1 + h4 * h * v1 + h5 * h * h * a1
    d0 = -30 * s2 + 60 * s3 - 30 * s4
    d1 = 1 - 18 * s2 + 32 * s3 - 15 * s4
    d2 = 0.5 * (2 * s - 9 * s2 + 12 * s3 - 5 * s4)
    d4 = -12 * s2 + 28 * s3 - 15 * s4
    d5 = 0.5 * (3 * s2 - 8 * s3 + 5 * s4)
    v = (d0 * x0 + d1 * h * v0 + d2 * h * h * a0 - d0 * x1 + d4 * h * v1 + d5 * h * h * a1) / h
    return x, v


def _hermite_one(tr, k, t):
    """Scalar-time version of _hermite (avoids array overhead in root finding)."""
    t0, t1 = float(tr.t[k]), float(tr.t[k + 1])
    h = t1 - t0
    s = min(max((t - t0) / h, 0.0), 1.0)
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    s5 = s4 * s
    hh = h * h
    c = (1 - 10 * s3 + 15 * s4 - 6 * s5, (s - 6 * s3 + 8 * s4 - 3 * s5) * h,
         0.5 * (s2 - 3 * s3 + 3 * s4 - s5) * hh, 10 * s3 - 15 * s4 + 6 * s5,
         (-4 * s3 + 7 * s4 - 3 * s5) * h, 0.5 * (s3 - 2 * s4 + s5) * hh)
    d0 = -30 * s2 + 60 * s3 - 30 * s4
    d = (d0 / h, 1 - 18 * s2 + 32 * s3 - 15 * s4, 0.5 * (2 * s - 9 * s2 + 12 * s3 - 5 * s4) * h,
         -d0 / h, -12 * s2 + 28 * s3 - 15 * s4, 0.5 * (3 * s2 - 8 * s3 + 5 * s4) * h)
    basis = np.array([c, d])
    rows = np.stack([tr.x[k], tr.v[k], tr.a[k], tr.x[k + 1], tr.v[k + 1], tr.a[k + 1]])
    out = basis @ rows
    return out[0], out[1]


@dataclass
class Event:
    """One maximal interval with |x - x_j| < R*eps."""
    j: int
    t_in: float
    t_out: float
    min_sep: float
    t_min: float
    x_in: np.ndarray
    v_in: np.ndarray
    xj_in: np.ndarray
    vj: np.ndarray
    v_out: np.ndarray
    open_start: bool = False
    open_end: bool = False
    overlap: bool = False

    def to_dict(self):
        return {"j": self.j, "t_in": self.t_in, "t_out": self.t_out, "min_sep": self.min_sep,
                "t_min": self.t_min, "x_in": self.x_in.tolist(), "v_in": self.v_in.tolist(),
                "xj_in": self.xj_in.tolist(), "vj": self.vj.tolist(), "v_out": self.v_out.tolist(),
                "open_start": self.open_start, "open_end": self.open_end, "overlap": self.overlap}


@dataclass
class Segment:
    k0: int
    k1: int
    neighbours: Optional[np.ndarray]  # None for free flight


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    segments: list
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> PhaseState:
        return PhaseState(self.x[-1], self.v[-1], float(self.t[-1]))

    def state_at(self, times):
        """Unwrapped positions and velocities at the given times."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        k = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, len(self.t) - 2)
        if len(self.t) == 1:
            return np.repeat(self.x, len(times), 0), np.repeat(self.v, len(times), 0)
        if len(times) == 1:
            x, v = _hermite_one(self, int(k[0]), float(times[0]))
            return x[None], v[None]
        x, v = _hermite(self.t[k], self.t[k + 1], self.x[k], self.v[k], self.a[k],
                        self.x[k + 1], self.v[k + 1], self.a[k + 1], times)
        return x.reshape(-1, 3), v.reshape(-1, 3)

    def state_exact(self, t):
        """Knot state at time t (must be a checkpoint)."""
        i = int(np.searchsorted(self.t, t))
        if i < len(self.t) and abs(self.t[i] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.x[i], self.v[i]
        x, v = self.state_at([t])
        return x[0], v[0]

    @property
    def n_steps(self):
        return len(self.t) - 1


# ---------------------------------------------------------------- integration

def _module(p: RadialPotential):
    return (core, p.kernel) if p.compiled else (_pycore, p.kernel)


def interaction_radius(p: RadialPotential, eps: float, R_event: float, threshold: float = 1e-16):
    """(rho_cut, a_int): force cut radius (microscopic) and interaction radius (macroscopic)."""
    if p.is_zero:
        return 0.0, R_event * eps
    rho_cut = float(p.cutoff) if p.cutoff is not None else p.force_range(threshold)
    return rho_cut, max(rho_cut, R_event) * eps


def step_tagged(state: PhaseState, bg: Background, p: RadialPotential, eps: float, dt_max: float,
                tol: float = 1e-9, threshold: float = 1e-16) -> PhaseState:
    """One accepted adaptive step of length at most dt_max."""
    mod, k = _module(p)
    rho_cut = float(p.cutoff) if p.cutoff is not None else (0.0 if p.is_zero else p.force_range(threshold))
    ts, xs, vs, _, st, _ = mod.integrate_segment(
        k, eps, rho_cut, state.x, state.v, state.t, state.t + dt_max,
        np.ascontiguousarray(bg.x, dtype=float).reshape(-1, 3),
        np.ascontiguousarray(bg.v, dtype=float).reshape(-1, 3),
        0.0, tol, dt_max, 1, False, 0.0)
    if st == 3:
        raise StepUnderflowError("step size underflow", t=state.t)
    return PhaseState(xs[-1], vs[-1], float(ts[-1]))


def run_trajectory(cfg: SimConfig, bg: Background, x0, v0, p: RadialPotential,
                   checkpoints: Sequence[float] = (), T: Optional[float] = None,
                   R_event: Optional[float] = None, tol: Optional[float] = None,
                   events: bool = True) -> Trajectory:
    """Integrate over [0, T] and build the event log of |x - x_j| < R*eps intervals.

    Every time in ``checkpoints`` is hit exactly by a knot, so states there
    are integrator states rather than interpolants.
    """
    eps = cfg.epsilon
    T = cfg.T if T is None else T
    tol = cfg.integrator_tol if tol is None else tol
    R_event = cfg.R if R_event is None else R_event
    mod, kern = _module(p)
    rho_cut, a_int = interaction_radius(p, eps, R_event, cfg.force_threshold)
    n = bg.n
    X = np.ascontiguousarray(bg.x, dtype=float).reshape(-1, 3)
    V = np.ascontiguousarray(bg.v, dtype=float).reshape(-1, 3)
    vmax_bg = float(np.linalg.norm(V, axis=1).max()) if n else 0.0
    dense = a_int >= 0.25
    stops = sorted({float(c) for c in checkpoints if 0 < c < T} | {float(T)})

    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    t = 0.0
    ts, xs, vs, accs = [np.array([t])], [x[None].copy()], [v[None].copy()], [np.zeros((1, 3))]
    segments = []
    nknots = 1
    h_last = 0.0
    n_encounters = 0
    # the zero potential still runs the encounter path so the event log is filled
    interacting = n > 0
    ci = 0
    while t < T:
        while stops[ci] <= t:
            ci += 1
        t_cp = stops[ci]
        if not interacting:
            x = x + (t_cp - t) * v
            t = t_cp
            _append(ts, xs, vs, accs, t, x, v, np.zeros(3))
            segments.append(Segment(nknots - 1, nknots, None))
            nknots += 1
            continue
        d = minimum_image(x - X - V * t)
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
        inside = dist < a_int * (1 + 1e-9)
        if dense or inside.any():
            if dense:
                nb = np.arange(n)
                t_stop, stop_exit = t_cp, False
                psi_now = 0.0
            else:
                nb = np.nonzero(dist < 2.0 * a_int)[0]
                psi_now = float(np.sum(p.psi(np.maximum(dist[nb], 1e-300) / eps)))
            vb = float(np.linalg.norm(v)) + 2.0 * vmax_bg + math.sqrt(2.0 * max(psi_now, 0.0))
            hmax = eps / (4.0 * max(vb, 1e-12))
            if not dense:
                window = a_int / (vb + vmax_bg)
                t_stop, stop_exit = min(t + window, t_cp), True
            while True:
                out = mod.integrate_segment(kern, eps, rho_cut, x, v, t, t_stop, X[nb], V[nb], a_int,
                                            tol, hmax, MAX_STEPS_PER_CALL, stop_exit, h_last)
                s_t, s_x, s_v, s_a, status, h_new = out
                if status in (0, 4):
                    ok = True
                    if not dense and len(s_t) > 1:
                        # no outsider may have reached the interaction radius, and
                        # the speed bound used for the window must have held
                        others = np.setdiff1d(np.arange(n), nb)
                        if len(others):
                            de = minimum_image(s_x[-1] - X[others] - V[others] * s_t[-1])
                            ok = np.sqrt(np.einsum("ij,ij->i", de, de)).min() > a_int
                        ok = ok and np.linalg.norm(s_v, axis=1).max() <= vb
                    if ok:
                        break
                    vb *= 2.0
                    hmax = eps / (4.0 * vb)
                    t_stop = t + 0.5 * (t_stop - t)
                    continue
                raise_for_status(status, "run_trajectory", t=t, neighbours=len(nb))
            if len(s_t) > 1:
                ts.append(s_t[1:])
                xs.append(s_x[1:])
                vs.append(s_v[1:])
                accs.append(s_a[1:])
                # the free-flight knot preceding an encounter carries zero acceleration;
                # overwrite with the true value so the interpolant is consistent
                accs[-2][-1] = s_a[0] if len(accs) >= 2 else accs[-2][-1]
                segments.append(Segment(nknots - 1, nknots - 1 + len(s_t) - 1, nb))
                nknots += len(s_t) - 1
                t, x, v = float(s_t[-1]), s_x[-1].copy(), s_v[-1].copy()
                h_last = h_new
            n_encounters += 1
        else:
            u = v - V
            vrel = float(np.linalg.norm(u, axis=1).max())
            window = t_cp - t
            if vrel > 0:
                window = min(window, (0.5 - a_int) / vrel)
            aa = np.einsum("ij,ij->i", u, u)
            bb = 2.0 * np.einsum("ij,ij->i", d, u)
            cc = dist * dist - a_int * a_int
            disc = bb * bb - 4.0 * aa * cc
            hit = (bb < 0) & (disc > 0)
            if hit.any():
                s_hit = 2.0 * cc[hit] / (-bb[hit] + np.sqrt(disc[hit]))
                window = min(window, float(s_hit.min()))
            t_new = t + window if t + window < t_cp else t_cp
            x = x + (t_new - t) * v
            t = t_new
            _append(ts, xs, vs, accs, t, x, v, np.zeros(3))
            segments.append(Segment(nknots - 1, nknots, None))
            nknots += 1

    traj = Trajectory(np.concatenate(ts), np.concatenate(xs), np.concatenate(vs), np.concatenate(accs),
                      segments)
    traj.meta = {"rho_cut": rho_cut, "a_int": a_int, "dense": dense, "encounter_calls": n_encounters,
                 "R_event": R_event, "eps": eps, "T": T, "tol": tol}
    if events:
        traj.events = event_log(traj, bg, R_event * eps)
    return traj


def _append(ts, xs, vs, accs, t, x, v, a):
    ts.append(np.array([t]))
    xs.append(x[None].copy())
    vs.append(v[None].copy())
    accs.append(a[None].copy())


# ---------------------------------------------------------------- events

def _sep_fn(traj, X, V, j):
    def f(t):
        x, _ = traj.state_at(t)
        d = minimum_image(x - X[j] - V[j] * np.asarray(t)[:, None])
        return np.sqrt(np.einsum("ij,ij->i", d, d))
    return f


def _bisect(f, lo, hi, radius, inside_at_lo):
    """Time of the crossing of `radius` between lo and hi to EVENT_TIME_TOL (Brent)."""
    g = lambda t: float(f(np.array([t]))[0]) - radius
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return float(lo)
    if ghi == 0.0 or (glo < 0) == (ghi < 0):
        return float(hi)
    return float(optimize.brentq(g, lo, hi, xtol=EVENT_TIME_TOL, rtol=4 * np.finfo(float).eps))


def event_log(traj: Trajectory, bg: Background, radius: float) -> list:
    """Maximal intervals with separation < radius, per background particle."""
    X, V = bg.x, bg.v
    raw = []  # (j, t_in, t_out, open_start, open_end, min_sep, t_min)
    T0, T1 = float(traj.t[0]), float(traj.t[-1])
    for seg in traj.segments:
        if seg.neighbours is None or len(seg.neighbours) == 0:
            continue
        tk = traj.t[seg.k0:seg.k1 + 1]
        # sub-sample every step for robust crossing detection
        frac = np.linspace(0.0, 1.0, SUBSAMPLES, endpoint=False)
        tt = (tk[:-1, None] + frac[None, :] * np.diff(tk)[:, None]).ravel()
        tt = np.append(tt, tk[-1])
        xx, _ = traj.state_at(tt)
        nb = seg.neighbours
        # cheap screen on knots
        d = minimum_image(xx[:, None, :] - X[nb][None] - V[nb][None] * tt[:, None, None])
        sep = np.sqrt(np.einsum("tjk,tjk->tj", d, d))
        for col in np.nonzero(sep.min(axis=0) < radius)[0]:
            j = int(nb[col])
            s = sep[:, col]
            ins = s < radius
            f = _sep_fn(traj, X, V, j)
            edges = np.nonzero(np.diff(ins.astype(int)))[0]
            # list of (start, end) index ranges of inside runs
            runs = []
            start = 0 if ins[0] else None
            for e in edges:
                if ins[e + 1]:
                    start = e + 1
                else:
                    runs.append((start, e))
                    start = None
            if start is not None:
                runs.append((start, len(s) - 1))
            for i0, i1 in runs:
                if i0 == 0 and ins[0]:
                    t_in, o_start = float(tt[0]), True
                else:
                    t_in, o_start = _bisect(f, tt[i0 - 1], tt[i0], radius, False), False
                if i1 == len(s) - 1:
                    t_out, o_end = float(tt[-1]), True
                else:
                    t_out, o_end = _bisect(f, tt[i1], tt[i1 + 1], radius, True), False
                k = i0 + int(np.argmin(s[i0:i1 + 1]))
                lo, hi = tt[max(k - 1, 0)], tt[min(k + 1, len(tt) - 1)]
                fine = np.linspace(lo, hi, 65)
                fs = f(fine)
                m = int(np.argmin(fs))
                raw.append([j, t_in, t_out, o_start, o_end, float(fs[m]), float(fine[m])])

    # merge intervals of the same particle split across segment boundaries
    raw.sort(key=lambda r: (r[0], r[1]))
    merged = []
    for r in raw:
        if merged and merged[-1][0] == r[0] and merged[-1][4] and r[3] and abs(r[1] - merged[-1][2]) < 1e-12:
            last = merged[-1]
            last[2], last[4] = r[2], r[4]
            if r[5] < last[5]:
                last[5], last[6] = r[5], r[6]
        else:
            merged.append(list(r))

    out = []
    for j, t_in, t_out, o_start, o_end, ms, tm in merged:
        xi_, vi_ = traj.state_at([t_in])
        _, vo_ = traj.state_at([t_out])
        xj = xi_[0] + minimum_image(X[j] + V[j] * t_in - xi_[0])
        out.append(Event(j, t_in, t_out, ms, tm, xi_[0], vi_[0], xj, V[j].copy(), vo_[0],
                         open_start=bool(o_start and t_in <= T0 + 1e-14),
                         open_end=bool(o_end and t_out >= T1 - 1e-14)))
    out.sort(key=lambda e: e.t_in)
    for a in range(len(out)):
        for b in range(a + 1, len(out)):
            if out[b].t_in >= out[a].t_out:
                break
            out[a].overlap = out[b].overlap = True
    return out


# ---------------------------------------------------------------- divergence

@dataclass
class DivergenceResult:
    gap: float
    matched: bool
    events_long: list
    events_short: list
    traj_long: Trajectory
    traj_short: Trajectory


def trajectory_gap(a: Trajectory, b: Trajectory, n_grid: int = 2001) -> float:
    """sup over a common time grid (plus all knots) of |dx| + |dv|."""
    T = min(a.t[-1], b.t[-1])
    grid = np.unique(np.concatenate([np.linspace(0, T, n_grid), a.t[a.t <= T], b.t[b.t <= T]]))
    xa, va = a.state_at(grid)
    xb, vb = b.state_at(grid)
    dx = np.linalg.norm(minimum_image(xa - xb), axis=1)
    dv = np.linalg.norm(va - vb, axis=1)
    return float(np.max(dx + dv))


def divergence(cfg: SimConfig, bg: Background, x0, v0, p_long: RadialPotential,
               p_short: RadialPotential, n_grid: int = 2001) -> DivergenceResult:
    """Run the long-range and truncated dynamics from the same data and compare."""
    tl = run_trajectory(cfg, bg, x0, v0, p_long)
    tsh = run_trajectory(cfg, bg, x0, v0, p_short)
    gap = trajectory_gap(tl, tsh, n_grid)
    key = lambda evs: sorted(e.j for e in evs)
    return DivergenceResult(gap, key(tl.events) == key(tsh.events), tl.events, tsh.events, tl, tsh)


def tagged_energy(traj: Trajectory, bg: Background, p: RadialPotential, eps: float, times=None):
    """1/2 |v|^2 + sum_j psi(|x - x_j(t)|/eps) along the path (conserved for static backgrounds)."""
    times = traj.t if times is None else np.asarray(times)
    x, v = traj.state_at(times)
    pot = np.zeros(len(times))
    for j in range(bg.n):
        d = minimum_image(x - bg.x[j] - bg.v[j] * times[:, None])
        pot += p.psi(np.linalg.norm(d, axis=1) / eps)
    return 0.5 * np.einsum("ij,ij->i", v, v) + pot


__all__ = ["PhaseState", "Background", "Trajectory", "Event", "Segment", "DivergenceResult",
           "sample_background", "step_tagged", "run_trajectory", "event_log", "divergence",
           "trajectory_gap", "tagged_energy", "minimum_image", "interaction_radius", "NumericalError"]
