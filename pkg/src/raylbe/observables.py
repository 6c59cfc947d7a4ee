"""Test functions and the fixed phase-space binning shared by the estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

TEST_KINDS = ("gaussian_bump", "poly_cutoff", "indicator")


@dataclass(frozen=True)
class TestFunction:
    """h(x, v) depending on velocity (and optionally on position through a box).

    gaussian_bump: exp(-|v - c|^2 / (2 w^2))
    poly_cutoff:   (1 - |v|^2 / a^2)_+^k
    indicator:     1 on the box lo <= v < hi (gradient bound is infinite)
    """

    __test__ = False  # not a pytest class

    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    width: float = 1.0
    degree: int = 2
    radius: float = 2.0
    lo: tuple = (-1.0, -1.0, -1.0)
    hi: tuple = (1.0, 1.0, 1.0)
    name: str = ""

    def __call__(self, x, v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if self.kind == "gaussian_bump":
            d = v - np.asarray(self.center)
            return np.exp(-0.5 * np.einsum("ij,ij->i", d, d) / self.width ** 2)
        if self.kind == "poly_cutoff":
            u = 1.0 - np.einsum("ij,ij->i", v, v) / self.radius ** 2
            return np.where(u > 0, np.maximum(u, 0.0) ** self.degree, 0.0)
        if self.kind == "indicator":
            return np.all((v >= np.asarray(self.lo)) & (v < np.asarray(self.hi)), axis=1).astype(float)
        raise ValueError(self.kind)

    def of_v(self, v):
        return self(None, v)

    def grad_bound(self) -> float:
        """sup |grad_v h| in closed form."""
        if self.kind == "gaussian_bump":
            # |d| e^{-|d|^2/2w^2}/w^2 peaks at |d| = w
            return math.exp(-0.5) / self.width
        if self.kind == "poly_cutoff":
            k, a = self.degree, self.radius
            if k < 1:
                return math.inf
            if k == 1:
                return 2.0 / a
            # 2 k |v|/a^2 (1 - |v|^2/a^2)^{k-1}, maximal at |v|^2 = a^2/(2k-1)
            y = 1.0 / (2 * k - 1)
            return 2 * k / a * math.sqrt(y) * (1 - y) ** (k - 1)
        return math.inf

    def label(self):
        if self.name:
            return self.name
        if self.kind == "gaussian_bump":
            return f"bump({','.join(f'{c:g}' for c in self.center)};{self.width:g})"
        if self.kind == "poly_cutoff":
            return f"poly({self.degree};{self.radius:g})"
        return "indicator"


def test_function(spec: dict) -> TestFunction:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in TEST_KINDS:
        raise ConfigError(f"unknown test function kind {kind!r}")
    kw = {}
    try:
        if kind == "gaussian_bump":
            kw["center"] = tuple(float(c) for c in spec.pop("center", (0, 0, 0)))
            kw["width"] = float(spec.pop("width", 1.0))
            if kw["width"] <= 0 or len(kw["center"]) != 3:
                raise ConfigError("gaussian_bump needs a positive width and a 3-vector center")
        elif kind == "poly_cutoff":
            kw["degree"] = int(spec.pop("degree", 2))
            kw["radius"] = float(spec.pop("radius", 2.0))
            if kw["degree"] < 1 or kw["radius"] <= 0:
                raise ConfigError("poly_cutoff needs degree >= 1 and a positive radius")
        else:
            kw["lo"] = tuple(float(c) for c in spec.pop("lo", (-1, -1, -1)))
            kw["hi"] = tuple(float(c) for c in spec.pop("hi", (1, 1, 1)))
        kw["name"] = str(spec.pop("name", ""))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad test function spec: {exc}") from exc
    if spec:
        raise ConfigError(f"unknown test function parameters {sorted(spec)}")
    return TestFunction(kind, **kw)


@dataclass(frozen=True)
class PhaseBinning:
    """Product binning of (x, v) with a fixed layout.

    Positions: n_x bins per axis on the unit torus.  Velocities, mode
    ``cube``: n_v bins per axis on [-V, V]^3; mode ``shells``: n_v speed
    shells of equal width on [0, V].  Either way one extra overflow bin
    collects |v| > V.
    """

    n_x: int = 1
    n_v: int = 8
    speed_ball: float = 8.0
    mode: str = "shells"

    def __post_init__(self):
        if self.mode not in ("cube", "shells"):
            raise ValueError(f"unknown binning mode {self.mode!r}")
        if self.n_x < 1 or self.n_v < 1 or not self.speed_ball > 0:
            raise ValueError("binning needs positive bin counts and speed ball")

    @property
    def n_vel(self):
        return self.n_v ** 3 if self.mode == "cube" else self.n_v

    @property
    def n_bins(self):
        return self.n_x ** 3 * self.n_vel + 1

    def index(self, x, v):
        x = np.mod(np.atleast_2d(np.asarray(x, dtype=float)), 1.0)
        v = np.atleast_2d(np.asarray(v, dtype=float))
        nx, nv, V = self.n_x, self.n_v, self.speed_ball
        ix = np.minimum((x * nx).astype(np.int64), nx - 1)
        speed = np.linalg.norm(v, axis=1)
        if self.mode == "cube":
            iv = np.clip(((v + V) / (2 * V) * nv).astype(np.int64), 0, nv - 1)
            jv = (iv[:, 0] * nv + iv[:, 1]) * nv + iv[:, 2]
        else:
            jv = np.minimum((speed / V * nv).astype(np.int64), nv - 1)
        idx = ((ix[:, 0] * nx + ix[:, 1]) * nx + ix[:, 2]) * self.n_vel + jv
        return np.where(speed > V, self.n_bins - 1, idx)

    def histogram(self, x, v):
        idx = self.index(x, v)
        return np.bincount(idx, minlength=self.n_bins).astype(float) / max(len(idx), 1)

    def spec(self):
        return {"position_bins": self.n_x, "velocity_bins": self.n_v, "speed_ball": self.speed_ball,
                "mode": self.mode}
