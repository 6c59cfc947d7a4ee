"""Ensemble runners shared by the command line and the acceptance suite.

A cell is one (epsilon, seed) pair of a run configuration.  Every random
quantity comes from ``rng.stream(seed, kind, index)``, so a cell's output
depends only on the configuration, epsilon and seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lbe_mc
from .compare import DistanceReport, density_distance, divergence_cell
from .config import RunConfig
from .dynamics import run_trajectory, sample_background
from .rng import stream
from .trees import ExclusionReport, classify, extract_tree, measure_excluded


def workers() -> int:
    """Worker count from RAYLBE_WORKERS (never affects results)."""
    try:
        return max(1, int(os.environ.get("RAYLBE_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class MDEnsemble:
    epsilon: float
    seed: int
    t: float
    x: np.ndarray
    v: np.ndarray
    jumps: np.ndarray
    trees: list
    classes: list
    first_clear: np.ndarray
    resampled: np.ndarray
    x0: np.ndarray = field(default=None)
    v0: np.ndarray = field(default=None)


def md_one(run: RunConfig, eps: float, seed: int, i: int, t_end: float):
    cfg = run.sim(eps, seed)
    p = run.truncated(eps)
    x0, v0 = run.initial.sample(stream(seed, "tagged", i), 1)
    bg = sample_background(cfg, run.background, stream(seed, "background", i), exclusion=x0[0])
    traj = run_trajectory(cfg, bg, x0[0], v0[0], p, T=t_end)
    tree = extract_tree(traj, cfg)
    cls = classify(tree, cfg, traj, bg)
    return (np.mod(traj.x[-1], 1.0), traj.v[-1].copy(), len(traj.events), tree, cls,
            bool(bg.first_draw_clear), bg.resampled, x0[0], v0[0])


def _md_chunk(args):
    run, eps, seed, lo, hi, t_end = args
    return [md_one(run, eps, seed, i, t_end) for i in range(lo, hi)]


def _map(fn, jobs):
    n = workers()
    if n > 1 and len(jobs) > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(n) as pool:
            return pool.map(fn, jobs)
    return [fn(j) for j in jobs]


def md_ensemble(run: RunConfig, eps: float, seed: int, n: Optional[int] = None,
                t_end: Optional[float] = None) -> MDEnsemble:
    """n tagged trajectories under the truncated potential, stopped at t_end."""
    n = run.samples["trajectories"] if n is None else n
    t_end = run.T * run.compare["t_fraction"] if t_end is None else t_end
    chunk = 50
    jobs = [(run, eps, seed, lo, min(lo + chunk, n), t_end) for lo in range(0, n, chunk)]
    rows = [r for part in _map(_md_chunk, jobs) for r in part]
    cols = list(zip(*rows))
    return MDEnsemble(eps, seed, t_end, np.array(cols[0]), np.array(cols[1]), np.array(cols[2], dtype=int),
                      list(cols[3]), list(cols[4]), np.array(cols[5]), np.array(cols[6]),
                      np.array(cols[7]), np.array(cols[8]))


def jump_model(run: RunConfig, eps: float, kinematics: Optional[str] = None) -> lbe_mc.JumpModel:
    cfg = run.sim(eps)
    return lbe_mc.JumpModel(run.truncated(eps), cfg.R, run.background, run.quad_tol,
                            kinematics or run.lbe.get("kinematics", "rayleigh"))


def lbe_ensemble(run: RunConfig, eps: float, seed: int, n: Optional[int] = None, times=None,
                 return_trees: bool = False, kinematics: Optional[str] = None):
    n = run.samples["walkers"] if n is None else n
    times = [run.T * run.compare["t_fraction"]] if times is None else times
    return lbe_mc.simulate(jump_model(run, eps, kinematics), run.initial, n, times, seed,
                           return_trees=return_trees)


@dataclass
class CellResult:
    epsilon: float
    seed: int
    distance: DistanceReport
    md_exclusion: ExclusionReport
    lbe_exclusion: ExclusionReport
    xi: float
    xi_empirical: float
    xi_se: float
    md: MDEnsemble
    lbe: object


def compare_cell(run: RunConfig, eps: float, seed: int, n_md: Optional[int] = None,
                 n_walkers: Optional[int] = None) -> CellResult:
    """MD (truncated) vs jump process at t = t_fraction * T for one cell."""
    cfg = run.sim(eps, seed)
    md = md_ensemble(run, eps, seed, n_md)
    snaps, trees, _ = lbe_ensemble(run, eps, seed, n_walkers, [md.t], return_trees=True)
    snap = snaps[0]
    rep = density_distance(md.x, md.v, snap.x, snap.v, run.binning(), run.tests(), md.jumps, snap.jumps,
                           n_boot=int(run.compare.get("bootstrap", 200)), rng=stream(seed, "bootstrap", 0),
                           metadata={"epsilon": eps, "seed": seed, "R": cfg.R, "N": cfg.n_background,
                                     "t": md.t, "kinematics": run.lbe.get("kinematics")})
    md_ex = measure_excluded(_with_T(cfg, md.t), md.classes)
    lbe_cls = []
    for i, tr in enumerate(trees):
        seen = np.vstack([tr.v0[None], tr.flags["v_before"], snap.v[i][None]])
        sup = float(np.linalg.norm(seen, axis=1).max())
        lbe_cls.append(classify(tr, _with_T(cfg, md.t), v_before=tr.flags["v_before"], speed_sup=sup))
    lbe_ex = measure_excluded(_with_T(cfg, md.t), lbe_cls)
    k = len(md.first_clear)
    p_hat = float(np.mean(md.first_clear))
    return CellResult(eps, seed, rep, md_ex, lbe_ex, cfg.xi, p_hat, math.sqrt(max(cfg.xi * (1 - cfg.xi), 1e-300) / k),
                      md, snap)


def _with_T(cfg, T):
    from dataclasses import replace
    return replace(cfg, T=T)


def divergence_row(run: RunConfig, eps: float, seed: int, n: Optional[int] = None):
    cfg = run.sim(eps, seed)
    n = run.divergence["trajectories"] if n is None else n
    return divergence_cell(cfg, run.potential, run.background, run.initial, n, T=float(run.divergence["T"]))
