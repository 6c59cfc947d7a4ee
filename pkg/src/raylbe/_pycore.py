"""Pure-Python twin of the compiled kernels in ``_core.pyx``.

Same signatures, same return tuples, same status codes.  Potentials are
either a packed parameter vector (see ``potentials.pack``) or any object
exposing vectorised ``psi`` / ``dpsi`` callables, which is how custom
potentials reach the quadratures.
"""

import math

import numpy as np
from scipy.special import gammaincc

OK, TOL_NOT_MET, NO_BRACKET, STEP_UNDERFLOW, MAX_STEPS = 0, 1, 2, 3, 4

MAXINT = 400
SIMPSON_SWITCH = 1e-3
IMPULSE_SWITCH = 1e-9

XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0])
WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208980436436, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821])
WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338])

# 21 abscissae on [-1, 1] and matching weights, Kronrod and embedded Gauss
_NODES = np.concatenate([-XGK[:10], [0.0], XGK[9::-1]])
_WK = np.concatenate([WGK[:10], [WGK[10]], WGK[9::-1]])
_WG = np.zeros(21)
_WG[[1, 3, 5, 7, 9]] = WG
_WG[[19, 17, 15, 13, 11]] = WG


def smooth_down(u):
    u = np.clip(u, 0.0, 1.0)
    return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)


def smooth_down_d(u):
    u = np.clip(u, 0.0, 1.0)
    return -30.0 * u * u * (1.0 - u) ** 2


class _Packed:
    """Vectorised evaluation of a packed parameter vector."""

    def __init__(self, params):
        p = np.asarray(params, dtype=float)
        self.kind = int(p[0])
        self.s, self.A, self.c, self.a, self.rho2, self.R, self.K, self.P = p[1:9]
        self.inv_a = 1.0 / self.a if self.a > 0 else 0.0

    def _tail(self, rho):
        return self.K * gammaincc(self.inv_a, self.c * rho ** self.a)

    def _dtail(self, rho):
        return -self.P * np.exp(-self.c * rho ** self.a)

    @np.errstate(over="ignore", divide="ignore", invalid="ignore")
    def raw_psi(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == 1:
            return rho ** -self.s
        if self.kind == 2:
            h = 0.5 * self.rho2
            core = self.A / rho ** 3
            chi = smooth_down((rho - h) / h)
            out = np.where(rho <= h, core, chi * core + (1.0 - chi) * self._tail(rho))
            return np.where(rho >= self.rho2, self._tail(rho), out)
        return np.zeros_like(rho)

    @np.errstate(over="ignore", divide="ignore", invalid="ignore")
    def raw_dpsi(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == 1:
            return -self.s * rho ** (-self.s - 1.0)
        if self.kind == 2:
            h = 0.5 * self.rho2
            core = self.A / rho ** 3
            dcore = -3.0 * core / rho
            u = (rho - h) / h
            chi = smooth_down(u)
            dchi = smooth_down_d(u) / h
            blend = dchi * (core - self._tail(rho)) + chi * dcore + (1.0 - chi) * self._dtail(rho)
            out = np.where(rho <= h, dcore, blend)
            return np.where(rho >= self.rho2, self._dtail(rho), out)
        return np.zeros_like(rho)

    def psi(self, rho):
        out = self.raw_psi(rho)
        if self.R > 0:
            out = smooth_down(np.asarray(rho) - (self.R - 1.0)) * out
        return out

    def dpsi(self, rho):
        out = self.raw_dpsi(rho)
        if self.R > 0:
            u = np.asarray(rho) - (self.R - 1.0)
            out = smooth_down(u) * out + smooth_down_d(u) * self.raw_psi(rho)
        return out


def as_pot(params):
    if hasattr(params, "psi") and hasattr(params, "dpsi"):
        return params
    return _Packed(params)


def _pot_info(pot):
    """(is_zero, cutoff R or 0, seams) for either representation."""
    zero = getattr(pot, "kind", None) == 0 or getattr(pot, "is_zero", False)
    R = getattr(pot, "R", 0.0) or 0.0
    seams = []
    if getattr(pot, "kind", None) == 2:
        seams += [0.5 * pot.rho2, pot.rho2]
    seams += list(getattr(pot, "seams", ()))
    if R > 0:
        seams.append(R - 1.0)
    return zero, R, seams


def _f(pot, rho, r, w2):
    return (rho - r) * (rho + r) / (rho * rho) - 2.0 * float(pot.psi(rho)) / w2


def _closest(pot, r, w2):
    zero, _, _ = _pot_info(pot)
    if zero:
        return r, 0.0, OK
    scale = max(r, 1.0)
    if r > 0.0:
        lo = max(r, 1e-12)
        fl = _f(pot, lo, r, w2)
        if fl >= 0.0:
            return lo, fl, OK
    else:
        lo = 0.0
    hi = 2.0 * scale
    while _f(pot, hi, r, w2) <= 0.0:
        hi *= 2.0
        if hi > 1e6 * scale:
            return hi, _f(pot, hi, r, w2), NO_BRACKET
    if r <= 0.0:
        lo = 0.5 * hi
        it = 0
        while _f(pot, lo, r, w2) >= 0.0:
            hi = lo
            lo *= 0.5
            it += 1
            if it > 2000:
                return lo, _f(pot, lo, r, w2), NO_BRACKET
    while hi - lo > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if _f(pot, mid, r, w2) > 0.0:
            hi = mid
        else:
            lo = mid
    rho = 0.5 * (lo + hi)
    for _ in range(100):
        f = _f(pot, rho, r, w2)
        if f > 0.0:
            hi = rho
        elif f < 0.0:
            lo = rho
        else:
            break
        df = -2.0 * float(pot.dpsi(rho)) / w2 + 2.0 * r * r / rho ** 3
        mid = rho - f / df if df > 0.0 else 0.5 * (lo + hi)
        if not (lo < mid < hi):
            mid = 0.5 * (lo + hi)
        if abs(mid - rho) <= 1e-16 * rho:
            rho = mid
            break
        rho = mid
    f = _f(pot, rho, r, w2)
    return rho, f, (TOL_NOT_MET if abs(f) > 1e-12 else OK)


def closest_approach(params, r, speed):
    """Largest root of 1 - 2 psi/|w|^2 - r^2/rho^2; returns (rho_star, residual, status)."""
    return _closest(as_pot(params), float(r), float(speed) ** 2)


def _gk21(fun, a, b):
    center, half = 0.5 * (a + b), 0.5 * (b - a)
    fx = fun(center + half * _NODES)
    k = half * np.dot(_WK, fx)
    g = half * np.dot(_WG, fx)
    return k, abs(k - g)


def _adapt(fun, pts, tol):
    segs = []
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            v, e = _gk21(fun, a, b)
            segs.append([a, b, v, e])
    total = sum(s[2] for s in segs)
    err = sum(s[3] for s in segs)
    while err > tol and len(segs) < MAXINT:
        i = max(range(len(segs)), key=lambda j: segs[j][3])
        a, b = segs[i][0], segs[i][1]
        m = 0.5 * (a + b)
        if not (a < m < b):
            break
        v1, e1 = _gk21(fun, a, m)
        v2, e2 = _gk21(fun, m, b)
        segs[i] = [a, m, v1, e1]
        segs.append([m, b, v2, e2])
        total = sum(s[2] for s in segs)
        err = sum(s[3] for s in segs)
    return total, err, (TOL_NOT_MET if err > tol else OK)


def _breakpoints(pot, rho_star, u_hi):
    _, _, seams = _pot_info(pot)
    pts = [0.0]
    for c in seams:
        if c > rho_star:
            u = math.sqrt(1.0 - rho_star / c)
            if u < u_hi:
                pts.append(u)
    return sorted(pts) + [u_hi]


class _Ctx:
    def __init__(self, pot, r, w2, rho_star):
        self.pot, self.r, self.w2, self.rho_star = pot, r, w2, rho_star
        self.psi_star = float(pot.psi(rho_star))
        self.dpsi_star = float(pot.dpsi(rho_star))
        self.beta = r / rho_star if rho_star > 0 else 0.0
        slope = 2.0 * self.beta ** 2 - 2.0 * self.dpsi_star * rho_star / w2
        self.lim = 2.0 / math.sqrt(slope) if slope > 0 else 0.0

    def g(self, u):
        x = 1.0 - u * u
        rho = self.rho_star / x
        drho = self.rho_star * u * u / x
        mid = self.rho_star + 0.5 * drho
        simpson = -drho * (self.dpsi_star + 4.0 * self.pot.dpsi(mid) + self.pot.dpsi(rho)) / 6.0
        drop = np.where(drho < SIMPSON_SWITCH * self.rho_star, simpson,
                        self.psi_star - self.pot.psi(rho))
        return self.beta ** 2 * u * u * (2.0 - u * u) + 2.0 * drop / self.w2, x

    def deflection(self, u):
        u = np.asarray(u, dtype=float)
        g, _ = self.g(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 2.0 * u / np.sqrt(g)
        return np.where((u < 1e-7) | (g <= 0.0), self.lim, val)

    def sojourn(self, u):
        u = np.asarray(u, dtype=float)
        g, x = self.g(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 2.0 * self.rho_star * u / (x * x * np.sqrt(g))
        small = self.lim * self.rho_star / (x * x)
        return np.where((u < 1e-7) | (g <= 0.0), small, val)


def _impulse(pot, r, w2, tol):
    _, R, _ = _pot_info(pot)

    def fun(t):
        uu = t / (1.0 - t)
        rho = r * (1.0 + uu * uu)
        return -pot.dpsi(rho) * 2.0 / np.sqrt(2.0 + uu * uu) / (1.0 - t) ** 2

    if R > 0:
        um = math.sqrt(R / r - 1.0)
        top = um / (1.0 + um)
    else:
        top = 1.0
    pref = 2.0 * r / w2
    val, err, st = _adapt(fun, [0.0, top], tol / pref)
    return pref * val, pref * err, st


def _theta(pot, r, w2, tol):
    zero, R, _ = _pot_info(pot)
    if zero or (R > 0 and r >= R):
        return 0.0, r, 0.0, OK
    rho_star, _, st = _closest(pot, r, w2)
    if st == NO_BRACKET:
        return 0.0, rho_star, 0.0, st
    if r <= 0.0:
        return math.pi, rho_star, 0.0, OK
    if 2.0 * float(pot.psi(r)) / w2 < IMPULSE_SWITCH:
        th, err, st = _impulse(pot, r, w2, tol)
        return th, rho_star, err, st
    ctx = _Ctx(pot, r, w2, rho_star)
    if R > 0:
        xr = rho_star / R
        free = math.asin(ctx.beta * xr)
        u_hi = math.sqrt(1.0 - xr)
    else:
        free, u_hi = 0.0, 1.0
    pts = _breakpoints(pot, rho_star, u_hi)
    val, err, st = _adapt(ctx.deflection, pts, 0.5 * tol / max(ctx.beta, 1e-300))
    theta = math.pi - 2.0 * (free + ctx.beta * val)
    return min(max(theta, 0.0), math.pi), rho_star, 2.0 * ctx.beta * err, st


def deviation_angle(params, r, speed, tol):
    """Returns (theta, rho_star, error_estimate, status)."""
    return _theta(as_pot(params), float(r), float(speed) ** 2, tol)


def deviation_angles(params, r, speed, tol):
    """Vectorised deviation_angle; returns (theta, rho_star, err, status) arrays."""
    pot = as_pot(params)
    rr, ww = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(speed, dtype=float))
    out = [_theta(pot, a, b * b, tol) for a, b in zip(rr.ravel(), ww.ravel())]
    if not out:
        z = np.zeros(rr.shape)
        return z, z.copy(), z.copy(), np.zeros(rr.shape, dtype=np.int32)
    th, rs, er, st = (np.array(c) for c in zip(*out))
    return (th.reshape(rr.shape), rs.reshape(rr.shape), er.reshape(rr.shape),
            st.astype(np.int32).reshape(rr.shape))


def impulse_angle(params, r, speed, tol):
    """First-order (small-angle) deflection; returns (theta, err, status)."""
    pot = as_pot(params)
    zero, R, _ = _pot_info(pot)
    if zero or r <= 0.0 or (R > 0 and r >= R):
        return 0.0, 0.0, OK
    return _impulse(pot, float(r), float(speed) ** 2, tol)


def scattering_time(params, r, speed, tol):
    """Time spent at separation < R; returns (tau, rho_star, err, status)."""
    pot = as_pot(params)
    zero, R, _ = _pot_info(pot)
    r, speed = float(r), float(speed)
    w2 = speed * speed
    if R <= 0:
        return float("inf"), 0.0, 0.0, OK
    if r >= R:
        return 0.0, r, 0.0, OK
    if zero:
        return 2.0 * math.sqrt(R * R - r * r) / speed, r, 0.0, OK
    rho_star, _, st = _closest(pot, r, w2)
    if st == NO_BRACKET:
        return 0.0, rho_star, 0.0, st
    ctx = _Ctx(pot, r, w2, rho_star)
    u_hi = math.sqrt(1.0 - rho_star / R)
    pts = _breakpoints(pot, rho_star, u_hi)
    val, err, st = _adapt(ctx.sojourn, pts, 0.5 * tol * speed)
    return 2.0 * val / speed, rho_star, 2.0 * err / speed, st


def psi_array(params, rho):
    return np.asarray(as_pot(params).psi(np.asarray(rho, dtype=float)), dtype=float)


def dpsi_array(params, rho):
    return np.asarray(as_pot(params).dpsi(np.asarray(rho, dtype=float)), dtype=float)


# ---------------------------------------------------------------- dynamics

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _accel(pot, eps, rho_cut, x, s, nbp, nbv):
    if len(nbp) == 0:
        return np.zeros(3)
    d = x - nbp - nbv * s
    d -= np.rint(d)
    dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    rho = dist / eps
    m = (rho < rho_cut) & (dist > 0)
    if not m.any():
        return np.zeros(3)
    f = -pot.dpsi(rho[m]) / (eps * dist[m])
    return (f[:, None] * d[m]).sum(axis=0)


def _min_sep(x, s, nbp, nbv):
    if len(nbp) == 0:
        return np.inf
    d = x - nbp - nbv * s
    d -= np.rint(d)
    return float(np.sqrt(np.einsum("ij,ij->i", d, d)).min())


def integrate_segment(params, eps, rho_cut, x0, v0, t0, t_end, nb_pos, nb_vel,
                      a_exit, tol, hmax, max_steps, stop_on_exit, h0=0.0):
    """Adaptive Dormand-Prince 5(4) integration of the tagged particle.

    Neighbour j sits at nb_pos[j] + nb_vel[j]*t (minimum image, unit torus).
    Integration stops at t_end, or, when stop_on_exit is set, at the first
    accepted step after which every neighbour is farther than a_exit.

    Returns (ts, xs, vs, accs, status, h_last); row 0 is the initial state.
    """
    pot = as_pot(params)
    nbp = np.asarray(nb_pos, dtype=float).reshape(-1, 3)
    nbv = np.asarray(nb_vel, dtype=float).reshape(-1, 3)
    atol_x, atol_v, rtol = tol * eps, tol, tol
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    t = float(t0)
    a0 = _accel(pot, eps, rho_cut, x, t, nbp, nbv)
    ts, xs, vs, acc = [t], [x.copy()], [v.copy()], [a0.copy()]
    kx = np.zeros((7, 3))
    kv = np.zeros((7, 3))
    kx[0], kv[0] = v, a0
    h = h0 if h0 > 0 else min(hmax, 1e-3 * eps)
    hmin = 1e-14 * max(abs(t0), 1.0)
    status = OK
    nsteps = 0
    while t < t_end:
        if nsteps >= max_steps:
            status = MAX_STEPS
            break
        if t + h > t_end:
            h = t_end - t
        if h < hmin:
            status = STEP_UNDERFLOW
            break
        for st in range(1, 6):
            xt = x + h * np.dot(_A[st], kx[:st])
            vt = v + h * np.dot(_A[st], kv[:st])
            kv[st] = _accel(pot, eps, rho_cut, xt, t + _C[st] * h, nbp, nbv)
            kx[st] = vt
        xn = x + h * np.dot(_B, kx[:6])
        vn = v + h * np.dot(_B, kv[:6])
        kv[6] = _accel(pot, eps, rho_cut, xn, t + h, nbp, nbv)
        kx[6] = vn
        xe = h * np.dot(_E, kx)
        ve = h * np.dot(_E, kv)
        sc_v = atol_v + rtol * np.maximum(np.abs(v), np.abs(vn))
        err = math.sqrt((np.sum((xe / atol_x) ** 2) + np.sum((ve / sc_v) ** 2)) / 6.0)
        if err <= 1.0:
            t += h
            x, v = xn, vn
            kx[0], kv[0] = kx[6], kv[6]
            nsteps += 1
            ts.append(t)
            xs.append(x.copy())
            vs.append(v.copy())
            acc.append(kv[0].copy())
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            h = min(h * fac, hmax)
            if stop_on_exit and _min_sep(x, t, nbp, nbv) > a_exit:
                break
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    return (np.array(ts), np.array(xs).reshape(-1, 3), np.array(vs).reshape(-1, 3),
            np.array(acc).reshape(-1, 3), status, h)
