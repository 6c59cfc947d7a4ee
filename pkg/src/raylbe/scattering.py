"""Two-body collision quantities for a radial repulsive potential.

Conventions: w = v_star - v is the relative velocity, r >= 0 the impact
parameter and zeta the azimuth of the impact vector (x_star - x projected
orthogonally to w) in a fixed orthonormal basis (b1, b2) of the plane
orthogonal to w.  The deviation angle is

    theta = pi - 2 * int_{rho*}^inf r drho / (rho^2 sqrt(1 - 2 psi/|w|^2 - r^2/rho^2)).

The substitution rho = rho*/(1 - u^2) removes the endpoint singularity and
the remaining smooth integral is done by adaptive Gauss-Kronrod (21 point).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _pycore
from ._backend import core
from .errors import NumericalError, raise_for_status
from .potentials import RadialPotential, truncate, untruncated

DEFAULT_TOL = 1e-10
KINEMATICS = ("symmetric", "rayleigh")


def _kernel(p: RadialPotential):
    if p.compiled:
        return core, p.kernel
    return _pycore, p.kernel


# ---------------------------------------------------------------- geometry

def plane_basis(w):
    """Orthonormal (b1, b2) orthogonal to w, Gram-Schmidt against the least-aligned axis.

    Accepts a single vector or an (n, 3) array.
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    w2 = np.atleast_2d(w)
    what = w2 / np.linalg.norm(w2, axis=1, keepdims=True)
    axis = np.argmin(np.abs(what), axis=1)
    e = np.zeros_like(what)
    e[np.arange(len(e)), axis] = 1.0
    b1 = e - np.sum(e * what, axis=1, keepdims=True) * what
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(what, b1)
    if single:
        return b1[0], b2[0]
    return b1, b2


@dataclass(frozen=True)
class ImpactGeometry:
    r: float
    zeta: float
    w: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    @property
    def direction(self):
        """Unit impact direction e(zeta) in the plane orthogonal to w."""
        return math.cos(self.zeta) * self.b1 + math.sin(self.zeta) * self.b2


def impact_geometry(r: float, zeta: float, v, v_star) -> ImpactGeometry:
    if r < 0:
        raise ValueError("impact parameter must be non-negative")
    w = np.asarray(v_star, dtype=float) - np.asarray(v, dtype=float)
    if not np.any(w):
        raise ValueError("relative velocity must be non-zero")
    b1, b2 = plane_basis(w)
    return ImpactGeometry(float(r), float(zeta) % (2 * math.pi), w, b1, b2)


def impact_parameters(sep, w):
    """(r, zeta) of the separation sep = x_star - x relative to w.

    Works row-wise on (n, 3) arrays.  Returns the perpendicular distance and
    its azimuth in ``plane_basis(w)``.
    """
    sep = np.asarray(sep, dtype=float)
    w = np.asarray(w, dtype=float)
    single = sep.ndim == 1
    sep2, w2 = np.atleast_2d(sep), np.atleast_2d(w)
    what = w2 / np.linalg.norm(w2, axis=1, keepdims=True)
    perp = sep2 - np.sum(sep2 * what, axis=1, keepdims=True) * what
    b1, b2 = plane_basis(w2)
    r = np.linalg.norm(perp, axis=1)
    zeta = np.mod(np.arctan2(np.sum(perp * b2, axis=1), np.sum(perp * b1, axis=1)), 2 * math.pi)
    if single:
        return float(r[0]), float(zeta[0])
    return r, zeta


def nu_vector(theta, zeta, w):
    """nu = sin(theta/2) w_hat - cos(theta/2) e(zeta); vectorised over rows."""
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    w2 = np.atleast_2d(w)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (len(w2),))
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (len(w2),))
    what = w2 / np.linalg.norm(w2, axis=1, keepdims=True)
    b1, b2 = plane_basis(w2)
    e = np.cos(zeta)[:, None] * b1 + np.sin(zeta)[:, None] * b2
    nu = np.sin(0.5 * theta)[:, None] * what - np.cos(0.5 * theta)[:, None] * e
    return nu[0] if single else nu


def apply_map(v, v_star, nu, kinematics="symmetric"):
    """Velocity update for a given unit nu.

    ``symmetric``: v' = v + (w.nu) nu, v*' = v* - (w.nu) nu (momentum and
    energy conserving exchange).  ``rayleigh``: the background velocity is
    unchanged and the tagged velocity is reflected in the moving frame,
    v' = v + 2 (w.nu) nu, which is the outcome of the tagged-particle
    equations of motion against a background particle on a straight line.
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    w = v_star - v
    k = np.sum(w * nu, axis=-1, keepdims=True)
    if kinematics == "symmetric":
        return v + k * nu, v_star - k * nu
    if kinematics == "rayleigh":
        return v + 2.0 * k * nu, v_star.copy()
    raise ValueError(f"unknown kinematics {kinematics!r}")


# ---------------------------------------------------------------- quadratures

def closest_approach(p: RadialPotential, r: float, speed: float) -> float:
    if not speed > 0:
        raise ValueError("speed must be positive")
    if r < 0:
        raise ValueError("impact parameter must be non-negative")
    mod, k = _kernel(p)
    rho, res, st = mod.closest_approach(k, float(r), float(speed))
    raise_for_status(st, "closest_approach", rho=rho, residual=res, r=r, speed=speed)
    return float(rho)


def _check_tol(tol):
    if not (1e-13 <= tol <= 1e-6):
        raise ValueError(f"quadrature tolerance {tol} outside [1e-13, 1e-6]")


def deviation_angle(p: RadialPotential, r: float, speed: float, tol: float = DEFAULT_TOL,
                    return_details: bool = False):
    """theta(r, |w|) in [0, pi]; with return_details also (rho_star, error estimate)."""
    _check_tol(tol)
    if not speed > 0:
        raise ValueError("speed must be positive")
    if r < 0:
        raise ValueError("impact parameter must be non-negative")
    mod, k = _kernel(p)
    th, rs, err, st = mod.deviation_angle(k, float(r), float(speed), tol)
    raise_for_status(st, "deviation_angle", theta=th, error=err, r=r, speed=speed)
    if return_details:
        return float(th), float(rs), float(err)
    return float(th)


def deviation_angles(p: RadialPotential, r, speed, tol: float = DEFAULT_TOL, strict: bool = True):
    """Vectorised theta; with strict=False statuses are returned instead of raised."""
    _check_tol(tol)
    mod, k = _kernel(p)
    th, rs, err, st = mod.deviation_angles(k, r, speed, tol)
    if strict:
        bad = np.nonzero(np.asarray(st) != 0)[0] if np.ndim(st) else ([0] if st else [])
        if len(bad):
            i = bad[0]
            raise_for_status(int(np.ravel(st)[i]), "deviation_angles", index=int(i),
                             error=float(np.ravel(err)[i]))
        return th
    return th, rs, err, st


def impulse_angle(p: RadialPotential, r: float, speed: float, tol: float = DEFAULT_TOL) -> float:
    """Small-angle deflection (2r/|w|^2) int_r^inf -psi'(rho)/sqrt(rho^2 - r^2) drho."""
    mod, k = _kernel(p)
    th, err, st = mod.impulse_angle(k, float(r), float(speed), tol)
    raise_for_status(st, "impulse_angle", error=err)
    return float(th)


def scattering_time(p: RadialPotential, r: float, speed: float, tol: float = DEFAULT_TOL) -> float:
    """Time the pair spends at separation < R, microscopic units."""
    if p.cutoff is None:
        raise ValueError("scattering time needs a truncated potential")
    if not 0 <= r < p.cutoff:
        raise ValueError("impact parameter must lie in [0, R)")
    if not speed > 0:
        raise ValueError("speed must be positive")
    mod, k = _kernel(p)
    tau, rs, err, st = mod.scattering_time(k, float(r), float(speed), tol)
    raise_for_status(st, "scattering_time", error=err)
    return float(tau)


def angle_gap(p: RadialPotential, R: float, r: float, speed: float, tol: float = DEFAULT_TOL):
    """(theta, theta_R, theta - theta_R) for the untruncated p and its truncation at R."""
    full = untruncated(p)
    th = deviation_angle(full, r, speed, tol)
    th_r = 0.0 if r >= R else deviation_angle(truncate(full, R), r, speed, tol)
    return th, th_r, th - th_r


def kappa(r, R: float, s: float):
    """R^-s (1/(1 - r^2/R^2) + r / ((R-1) (1 - r^2/(R-1)^2)^(3/2)))."""
    r = np.asarray(r, dtype=float)
    if np.any(r >= R - 1) or np.any(r < 0):
        raise ValueError("kappa needs 0 <= r < R - 1")
    out = R ** (-s) * (1.0 / (1.0 - r * r / (R * R))
                       + r / ((R - 1.0) * (1.0 - r * r / (R - 1.0) ** 2) ** 1.5))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- full map

@dataclass(frozen=True)
class ScatterOutcome:
    theta: float
    rho_star: float
    v_prime: np.ndarray
    v_star_prime: np.ndarray
    nu_vec: np.ndarray
    tau_star: Optional[float] = None


def scatter(p: RadialPotential, g: ImpactGeometry, v, v_star, tol: float = DEFAULT_TOL,
            kinematics: str = "symmetric", with_time: bool = True) -> ScatterOutcome:
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    w = v_star - v
    speed = float(np.linalg.norm(w))
    if speed == 0:
        raise ValueError("scatter needs v != v_star")
    if not np.allclose(w, g.w, rtol=1e-12, atol=1e-14):
        raise ValueError("geometry was built for a different relative velocity")
    if p.cutoff is not None and g.r >= p.cutoff:
        th, rs = 0.0, g.r
    else:
        th, rs, _ = deviation_angle(p, g.r, speed, tol, return_details=True)
    what = w / speed
    nu = math.sin(0.5 * th) * what - math.cos(0.5 * th) * g.direction
    nu /= np.linalg.norm(nu)
    vp, vsp = apply_map(v, v_star, nu, kinematics)
    tau = None
    if with_time and p.cutoff is not None:
        tau = scattering_time(p, min(g.r, p.cutoff), speed, max(tol, 1e-10)) if g.r < p.cutoff else 0.0
    return ScatterOutcome(th, rs, vp, vsp, nu, tau)


def scatter_many(p: RadialPotential, r, zeta, v, v_star, tol: float = DEFAULT_TOL,
                 kinematics: str = "symmetric"):
    """Vectorised scattering map over rows; returns (v', v_star', theta)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    v_star = np.atleast_2d(np.asarray(v_star, dtype=float))
    w = v_star - v
    speed = np.linalg.norm(w, axis=1)
    r = np.broadcast_to(np.asarray(r, dtype=float), speed.shape)
    theta = np.zeros_like(speed)
    live = speed > 0
    if p.cutoff is not None:
        live &= r < p.cutoff
    if live.any():
        th, rs, err, st = deviation_angles(p, r[live], speed[live], tol, strict=False)
        if np.any(st != 0):
            i = int(np.nonzero(st != 0)[0][0])
            raise_for_status(int(st[i]), "scatter_many", r=float(r[live][i]), speed=float(speed[live][i]))
        theta[live] = th
    out_v, out_vs = v.copy(), v_star.copy()
    if live.any():
        nu = nu_vector(theta[live], np.broadcast_to(zeta, speed.shape)[live], w[live])
        out_v[live], out_vs[live] = apply_map(v[live], v_star[live], nu, kinematics)
    return out_v, out_vs, theta


__all__ = [
    "ImpactGeometry", "ScatterOutcome", "plane_basis", "impact_geometry", "impact_parameters",
    "nu_vector", "apply_map", "closest_approach", "deviation_angle", "deviation_angles",
    "impulse_angle", "scattering_time", "angle_gap", "kappa", "scatter", "scatter_many",
    "NumericalError", "KINEMATICS",
]
