"""Velocity densities for the background (g) and product initial densities f0.

Families: maxwellian(temperature, drift), uniform_ball(radius, center),
point(v).  Each knows how to sample itself, its first and second moments,
a size-biased sampler (density proportional to |v| g(v)) and the mean
relative speed E|v - v*| used by the loss rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError


def _unit_vectors(rng, n):
    z = rng.standard_normal((n, 3))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass(frozen=True)
class VelocityDensity:
    kind: str
    temperature: float = 1.0
    radius: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    # ---- construction helpers
    @property
    def sigma(self):
        return math.sqrt(self.temperature)

    @property
    def c(self):
        return np.asarray(self.center, dtype=float)

    @property
    def centered(self):
        return not np.any(self.c)

    def spec(self):
        if self.kind == "maxwellian":
            return {"kind": "maxwellian", "temperature": self.temperature, "drift": list(self.center)}
        if self.kind == "uniform_ball":
            return {"kind": "uniform_ball", "radius": self.radius, "center": list(self.center)}
        return {"kind": "point", "v": list(self.center)}

    # ---- sampling
    def sample(self, rng, n):
        if self.kind == "maxwellian":
            return self.c + self.sigma * rng.standard_normal((n, 3))
        if self.kind == "uniform_ball":
            s = self.radius * rng.random(n) ** (1.0 / 3.0)
            return self.c + s[:, None] * _unit_vectors(rng, n)
        return np.tile(self.c, (n, 1))

    def sample_size_biased(self, rng, n):
        """Draws from |v| g(v) / m1; requires a centred density."""
        if not self.centered and self.kind != "point":
            raise ValueError("size-biased sampling implemented for centred densities")
        if self.kind == "maxwellian":
            s = self.sigma * np.sqrt(2.0 * rng.gamma(2.0, 1.0, n))
            return s[:, None] * _unit_vectors(rng, n)
        if self.kind == "uniform_ball":
            s = self.radius * rng.random(n) ** 0.25
            return s[:, None] * _unit_vectors(rng, n)
        return np.tile(self.c, (n, 1))

    # ---- density and moments
    def pdf(self, v):
        v = np.atleast_2d(np.asarray(v, dtype=float)) - self.c
        r2 = np.sum(v * v, axis=1)
        if self.kind == "maxwellian":
            t = self.temperature
            return (2 * math.pi * t) ** -1.5 * np.exp(-0.5 * r2 / t)
        if self.kind == "uniform_ball":
            return np.where(r2 <= self.radius ** 2, 3.0 / (4 * math.pi * self.radius ** 3), 0.0)
        return np.where(r2 == 0, np.inf, 0.0)

    def first_moment(self):
        """E|v*|."""
        if self.kind == "maxwellian":
            return self.sigma * mean_abs_shifted_gaussian(np.linalg.norm(self.c) / self.sigma)
        if self.kind == "uniform_ball":
            return mean_abs_ball(np.linalg.norm(self.c), self.radius)
        return float(np.linalg.norm(self.c))

    def second_moment(self):
        """E|v*|^2."""
        c2 = float(self.c @ self.c)
        if self.kind == "maxwellian":
            return 3.0 * self.temperature + c2
        if self.kind == "uniform_ball":
            return 0.6 * self.radius ** 2 + c2
        return c2

    def sup_weighted(self):
        """esssup (1 + |v|^5) g(v); infinite for the point mass."""
        if self.kind == "point":
            return math.inf
        if self.kind == "uniform_ball":
            top = np.linalg.norm(self.c) + self.radius
            return (1 + top ** 5) * 3.0 / (4 * math.pi * self.radius ** 3)
        r = np.linspace(0, np.linalg.norm(self.c) + 20 * self.sigma, 20001)
        # along the ray through the drift the weight is largest
        d = self.c / np.linalg.norm(self.c) if not self.centered else np.array([1.0, 0, 0])
        vals = (1 + r ** 5) * self.pdf(r[:, None] * d)
        return float(vals.max())

    def speed_bound(self, q=1 - 1e-12):
        """Speed exceeded with probability < 1 - q (exact bound for compact support)."""
        if self.kind == "maxwellian":
            return float(np.linalg.norm(self.c) + self.sigma * math.sqrt(2 * math.log(1 / (1 - q)) + 6))
        if self.kind == "uniform_ball":
            return float(np.linalg.norm(self.c) + self.radius)
        return float(np.linalg.norm(self.c))

    def mean_relative_speed(self, v):
        """E|v - v*| for v* ~ g, vectorised over rows of v."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        d = np.linalg.norm(v - self.c, axis=1)
        if self.kind == "maxwellian":
            return self.sigma * mean_abs_shifted_gaussian(d / self.sigma)
        if self.kind == "uniform_ball":
            return mean_abs_ball(d, self.radius)
        return d


def mean_abs_shifted_gaussian(lam):
    """E|Z + lam e| for Z standard normal in three dimensions."""
    lam = np.asarray(lam, dtype=float)
    small = lam < 1e-4
    safe = np.where(small, 1.0, lam)
    big = np.sqrt(2 / np.pi) * np.exp(-0.5 * safe ** 2) + (safe + 1.0 / safe) * erf(safe / np.sqrt(2))
    # series at the origin: 2 sqrt(2/pi) (1 + lam^2/6)
    ser = 2 * np.sqrt(2 / np.pi) * (1 + lam ** 2 / 6)
    out = np.where(small, ser, big)
    return float(out) if out.ndim == 0 else out


def mean_abs_ball(d, a):
    """Mean distance from a point at distance d from the centre to a uniform ball of radius a."""
    d = np.asarray(d, dtype=float)
    inside = 0.75 * a + d * d / (2 * a) - d ** 4 / (20 * a ** 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        outside = d + a * a / (5 * d)
    out = np.where(d < a, inside, outside)
    return float(out) if out.ndim == 0 else out


def velocity_density(spec: dict) -> VelocityDensity:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "maxwellian":
            t = float(spec.pop("temperature", 1.0))
            drift = tuple(float(x) for x in spec.pop("drift", (0.0, 0.0, 0.0)))
            if t <= 0:
                raise ConfigError("maxwellian temperature must be positive")
            out = VelocityDensity("maxwellian", temperature=t, center=drift)
        elif kind == "uniform_ball":
            a = float(spec.pop("radius", 1.0))
            c = tuple(float(x) for x in spec.pop("center", (0.0, 0.0, 0.0)))
            if a <= 0:
                raise ConfigError("uniform_ball radius must be positive")
            out = VelocityDensity("uniform_ball", radius=a, center=c)
        elif kind == "point":
            out = VelocityDensity("point", center=tuple(float(x) for x in spec.pop("v", (0.0, 0.0, 0.0))))
        else:
            raise ConfigError(f"unknown velocity density kind {kind!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad velocity density spec: {exc}") from exc
    if spec:
        raise ConfigError(f"unknown velocity density parameters {sorted(spec)}")
    if len(out.center) != 3:
        raise ConfigError("velocity vectors need three components")
    return out


def moment_report(g: VelocityDensity) -> dict:
    """The two background conditions: finite (1+|v|^2) moment and bounded (1+|v|^5) g."""
    return {
        "second_moment": 1.0 + g.second_moment(),
        "second_moment_finite": math.isfinite(g.second_moment()),
        "weighted_sup": g.sup_weighted(),
        "weighted_sup_finite": math.isfinite(g.sup_weighted()),
    }


# ---------------------------------------------------------------- positions

@dataclass(frozen=True)
class PositionDensity:
    kind: str  # uniform | gaussian
    center: tuple = (0.5, 0.5, 0.5)
    width: float = 0.1

    def sample(self, rng, n):
        if self.kind == "uniform":
            return rng.random((n, 3))
        return np.mod(np.asarray(self.center) + self.width * rng.standard_normal((n, 3)), 1.0)

    def pdf(self, x, images=3):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "uniform":
            return np.ones(len(x))
        out = np.ones(len(x))
        k = np.arange(-images, images + 1)
        for i in range(3):
            d = x[:, i, None] - self.center[i] - k[None, :]
            out *= np.exp(-0.5 * (d / self.width) ** 2).sum(axis=1) / (math.sqrt(2 * math.pi) * self.width)
        return out

    def spec(self):
        if self.kind == "uniform":
            return {"kind": "uniform"}
        return {"kind": "gaussian", "center": list(self.center), "width": self.width}


def position_density(spec: dict) -> PositionDensity:
    spec = dict(spec)
    kind = spec.pop("kind", "uniform")
    if kind == "uniform":
        out = PositionDensity("uniform")
    elif kind == "gaussian":
        c = tuple(float(x) for x in spec.pop("center", (0.5, 0.5, 0.5)))
        w = float(spec.pop("width", 0.1))
        if w <= 0 or len(c) != 3:
            raise ConfigError("gaussian position density needs a positive width and 3-vector center")
        out = PositionDensity("gaussian", c, w)
    else:
        raise ConfigError(f"unknown position density kind {kind!r}")
    if spec:
        raise ConfigError(f"unknown position density parameters {sorted(spec)}")
    return out


@dataclass(frozen=True)
class InitialDensity:
    """f0(x, v) = position density times velocity density."""

    position: PositionDensity = field(default_factory=lambda: PositionDensity("uniform"))
    velocity: VelocityDensity = field(default_factory=lambda: VelocityDensity("maxwellian"))

    def sample(self, rng, n):
        return self.position.sample(rng, n), self.velocity.sample(rng, n)

    def spec(self):
        return {"position": self.position.spec(), "velocity": self.velocity.spec()}


def initial_density(spec: dict) -> InitialDensity:
    spec = dict(spec)
    pos = position_density(spec.pop("position", {"kind": "uniform"}))
    vel = velocity_density(spec.pop("velocity", {"kind": "maxwellian"}))
    if spec:
        raise ConfigError(f"unknown f0 parameters {sorted(spec)}")
    if vel.kind == "point":
        raise ConfigError("f0 velocity density must be a bounded density, not a point mass")
    return InitialDensity(pos, vel)
