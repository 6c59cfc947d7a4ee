"""Marked collision trees: extraction from short-range trajectories,
classification into good dynamics / good trees / the restricted set, and
ensemble bookkeeping of the excluded fractions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import scattering as sc
from ._stats import wilson_interval
from .config import SimConfig
from .dynamics import Background, Trajectory, minimum_image
from .potentials import RadialPotential


@dataclass
class MarkedTree:
    """Root (x0, v0) plus nodes (t_i, r_i, zeta_i, v_i) in time order.

    ``r`` is in microscopic units (the scale of the potential), t in
    macroscopic time.
    """

    x0: np.ndarray
    v0: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r: np.ndarray = field(default_factory=lambda: np.zeros(0))
    zeta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.r = np.asarray(self.r, dtype=float).reshape(-1)
        self.zeta = np.asarray(self.zeta, dtype=float).reshape(-1)
        self.v = np.asarray(self.v, dtype=float).reshape(-1, 3)

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def tau(self) -> float:
        return float(self.t.max()) if self.n else 0.0

    @property
    def final_marker(self):
        if not self.n:
            return None
        return float(self.t[-1]), float(self.r[-1]), float(self.zeta[-1]), self.v[-1].copy()

    def parent(self) -> "MarkedTree":
        """The tree with its final node removed."""
        if not self.n:
            raise ValueError("root-only tree has no parent")
        return MarkedTree(self.x0, self.v0, self.t[:-1], self.r[:-1], self.zeta[:-1], self.v[:-1])

    def append(self, t, r, zeta, v):
        if self.n and t <= self.t[-1]:
            raise ValueError("node times must increase strictly")
        self.t = np.append(self.t, t)
        self.r = np.append(self.r, r)
        self.zeta = np.append(self.zeta, zeta)
        self.v = np.vstack([self.v, np.asarray(v, dtype=float)[None]])

    def check(self, R: Optional[float] = None):
        if self.n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("node times not strictly increasing")
        if R is not None and np.any((self.r < 0) | (self.r > R)):
            raise ValueError("impact parameter outside [0, R]")

    def to_dict(self):
        return {"root": [self.x0.tolist(), self.v0.tolist()],
                "nodes": [[float(t), float(r), float(z), v.tolist()]
                          for t, r, z, v in zip(self.t, self.r, self.zeta, self.v)]}

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        nodes = d["nodes"]
        return cls(d["root"][0], d["root"][1], [n[0] for n in nodes], [n[1] for n in nodes],
                   [n[2] for n in nodes], [n[3] for n in nodes] if nodes else np.zeros((0, 3)))


def replay(tree: MarkedTree, p: RadialPotential, t_end: float, tol: float = 1e-10,
           kinematics: str = "rayleigh"):
    """Boltzmann dynamics of a tree: free flight with instantaneous scattering at each node.

    Returns (x(t_end) unwrapped, v(t_end), velocities just before each node).
    """
    x = tree.x0.astype(float).copy()
    v = tree.v0.astype(float).copy()
    t = 0.0
    before = np.zeros((tree.n, 3))
    for i in range(tree.n):
        ti = float(tree.t[i])
        if ti > t_end:
            before = before[:i]
            break
        x = x + (ti - t) * v
        t = ti
        before[i] = v
        if np.any(tree.v[i] != v):
            g = sc.impact_geometry(float(tree.r[i]), float(tree.zeta[i]), v, tree.v[i])
            v = sc.scatter(p, g, v, tree.v[i], tol, kinematics=kinematics, with_time=False).v_prime
    x = x + (t_end - t) * v
    return x, v, before


# ---------------------------------------------------------------- extraction

class OverlapError(ValueError):
    pass


def extract_tree(traj: Trajectory, cfg: SimConfig, x0=None, v0=None, strict: bool = False) -> MarkedTree:
    """One node per near-collision event of a short-range trajectory.

    t_i is the entry time, v_i the background velocity, r_i and zeta_i the
    impact parameter (microscopic) and azimuth of x_j - x at entry relative
    to w = v_j - v.  Overlapping events set ``flags['overlap']``; with
    strict=True they raise instead.
    """
    x0 = traj.x[0] if x0 is None else x0
    v0 = traj.v[0] if v0 is None else v0
    tree = MarkedTree(x0, v0)
    overlap = any(e.overlap for e in traj.events)
    if overlap and strict:
        raise OverlapError("two background particles simultaneously within R*eps")
    evs = sorted(traj.events, key=lambda e: e.t_in)
    eps = cfg.epsilon
    ts, rs, zs, vs, js = [], [], [], [], []
    for e in evs:
        w = e.vj - e.v_in
        if np.linalg.norm(w) == 0:
            r, z = float(np.linalg.norm(e.xj_in - e.x_in)) / eps, 0.0
        else:
            r, z = sc.impact_parameters((e.xj_in - e.x_in) / eps, w)
        ts.append(e.t_in)
        rs.append(min(r, cfg.R))
        zs.append(z)
        vs.append(e.vj)
        js.append(e.j)
    tree = MarkedTree(x0, v0, ts, rs, zs, vs if vs else np.zeros((0, 3)))
    tree.flags = {"overlap": overlap, "open_start": any(e.open_start for e in evs),
                  "particles": js, "v_before": np.array([e.v_in for e in evs]).reshape(-1, 3)}
    return tree


# ---------------------------------------------------------------- classification

@dataclass
class TreeClassification:
    good_dynamics: bool
    dynamics_flags: dict
    good_tree: bool
    tree_flags: dict
    in_R_eps: bool

    def row(self):
        out = {"good_dynamics": self.good_dynamics, "good_tree": self.good_tree, "in_R_eps": self.in_R_eps}
        out.update({f"dyn_{k}": v for k, v in self.dynamics_flags.items()})
        out.update({f"tree_{k}": v for k, v in self.tree_flags.items()})
        return out


def classify(tree: MarkedTree, cfg: SimConfig, traj: Optional[Trajectory] = None,
             bg: Optional[Background] = None, v_before=None, speed_sup: Optional[float] = None,
             ) -> TreeClassification:
    """Evaluate good dynamics, good tree and restricted-set membership.

    With a trajectory, incoming velocities and the speed supremum come from
    the dynamics and the recollision / overlap checks use its event log;
    without one (jump-process trees) they come from ``v_before`` and
    ``speed_sup`` and the dynamics-only conditions pass trivially.
    """
    n = tree.n
    if v_before is None:
        v_before = tree.flags.get("v_before") if "v_before" in tree.flags else None
    if v_before is None:
        raise ValueError("incoming velocities are needed for classification")
    v_before = np.asarray(v_before, dtype=float).reshape(-1, 3)
    rel = np.linalg.norm(v_before - tree.v, axis=1) if n else np.zeros(0)
    gaps = np.diff(tree.t) if n > 1 else np.zeros(0)

    dyn = {"velocity_separation": bool(np.all(rel > 0)),
           "time_separation": bool(np.all(gaps > 0)),
           "no_initial_overlap": True,
           "recollision_free": True,
           "no_overlap": True}
    if traj is not None:
        if bg is not None and bg.n:
            d = minimum_image(tree.x0 - bg.x)
            dyn["no_initial_overlap"] = bool(np.all(np.linalg.norm(d, axis=1) > cfg.R * cfg.epsilon))
        else:
            dyn["no_initial_overlap"] = not tree.flags.get("open_start", False)
        js = [e.j for e in traj.events]
        dyn["recollision_free"] = len(js) == len(set(js))
        dyn["no_overlap"] = not any(e.overlap for e in traj.events)
    good_dyn = all(dyn.values())

    if speed_sup is None:
        if traj is not None:
            upto = traj.t <= tree.tau + 1e-15
            speed_sup = float(np.linalg.norm(traj.v[upto], axis=1).max())
            if tree.n:
                _, vv = traj.state_at(np.linspace(0, tree.tau, 257))
                speed_sup = max(speed_sup, float(np.linalg.norm(vv, axis=1).max()))
        else:
            speed_sup = float(max(np.linalg.norm(tree.v0), *(np.linalg.norm(v_before, axis=1) if n else [0.0])))
    bg_speed = float(np.linalg.norm(tree.v, axis=1).max()) if n else 0.0
    tf = {"speed_bound": max(speed_sup, bg_speed) <= cfg.V2,
          "separation_bound": bool(np.all(rel >= cfg.V1)),
          "count_bound": n <= cfg.M,
          "gap_bound": bool(np.all(gaps > cfg.delta))}
    good_tree = good_dyn and all(tf.values())
    in_r = good_tree and bool(np.all(tree.r <= cfg.r_restriction))
    return TreeClassification(good_dyn, dyn, good_tree, tf, in_r)


# ---------------------------------------------------------------- ensembles

def lemma_bound(cfg: SimConfig) -> float:
    """V2 * sum_{k=1}^{floor(M)} (T V2 b (1 + 1/V1))^k."""
    q = cfg.T * cfg.V2 * cfg.b * (1.0 + 1.0 / cfg.V1)
    kmax = int(math.floor(cfg.M))
    return cfg.V2 * sum(q ** k for k in range(1, kmax + 1))


@dataclass
class ExclusionReport:
    n: int
    fractions: dict
    intervals: dict
    flag_failures: dict
    bound: float

    def to_dict(self):
        return {"n": self.n, "fractions": self.fractions,
                "intervals": {k: list(v) for k, v in self.intervals.items()},
                "flag_failures": self.flag_failures, "lemma_bound": self.bound}


def measure_excluded(cfg: SimConfig, classes: Sequence[TreeClassification]) -> ExclusionReport:
    """Fractions outside good dynamics, outside good trees and outside the restricted set."""
    n = len(classes)
    counts = {"not_good_dynamics": sum(not c.good_dynamics for c in classes),
              "not_good_tree": sum(not c.good_tree for c in classes),
              "not_R_eps": sum(not c.in_R_eps for c in classes),
              "good_tree_not_R_eps": sum(c.good_tree and not c.in_R_eps for c in classes)}
    fr = {k: (v / n if n else 0.0) for k, v in counts.items()}
    ci = {k: wilson_interval(v, n) for k, v in counts.items()}
    flags = {}
    for c in classes:
        for k, v in list(c.dynamics_flags.items()) + list(c.tree_flags.items()):
            flags[k] = flags.get(k, 0) + (not v)
    return ExclusionReport(n, fr, ci, flags, lemma_bound(cfg))
