# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: potential evaluation, two-body quadratures and the
Dormand-Prince integrator for the tagged-particle equations of motion.

Every public function here has a pure-Python twin in ``_pycore`` with the
same signature and return convention.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, pow, fabs, asin, rint, M_PI, fmax, fmin, log, lgamma

cnp.import_array()

# status codes shared with _pycore
DEF OK = 0
DEF TOL_NOT_MET = 1
DEF NO_BRACKET = 2
DEF STEP_UNDERFLOW = 3
DEF MAX_STEPS = 4

DEF MAXINT = 400
DEF SIMPSON_SWITCH = 1e-3
DEF IMPULSE_SWITCH = 1e-9

cdef double[11] XGK = [
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0]
cdef double[11] WGK = [
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208980436436, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821]
cdef double[5] WG = [
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338]


cdef struct Pot:
    int kind        # 0 zero, 1 power law, 2 stretched exponential
    double s
    double A        # core amplitude (stretched)
    double c
    double a        # 3/2 + gamma
    double rho2
    double R        # cutoff radius, 0 = none
    double K        # tail normalisation
    double P        # tail force prefactor
    double inv_a
    double lg_inv_a  # log Gamma(1/a)


cdef Pot unpack(double[::1] p):
    cdef Pot q
    q.kind = <int>p[0]
    q.s = p[1]
    q.A = p[2]
    q.c = p[3]
    q.a = p[4]
    q.rho2 = p[5]
    q.R = p[6]
    q.K = p[7]
    q.P = p[8]
    q.inv_a = 1.0 / p[4] if p[4] > 0 else 0.0
    q.lg_inv_a = lgamma(q.inv_a) if q.inv_a > 0 else 0.0
    return q


cdef inline double smooth_down(double u) nogil:
    # 1 at u<=0, 0 at u>=1, C2 quintic in between
    if u <= 0.0:
        return 1.0
    if u >= 1.0:
        return 0.0
    return 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


cdef inline double smooth_down_d(double u) nogil:
    if u <= 0.0 or u >= 1.0:
        return 0.0
    return -30.0 * u * u * (1.0 - u) * (1.0 - u)


cdef double upper_gamma_q(double a, double x, double lg_a) nogil:
    # regularised upper incomplete gamma Q(a, x): power series for x < a + 1,
    # modified Lentz continued fraction otherwise
    cdef double pref, term, total, ap, b, c, d, h, an, delta
    cdef int n
    if x <= 0.0:
        return 1.0
    pref = exp(a * log(x) - x - lg_a)
    if x < a + 1.0:
        ap = a
        term = 1.0 / a
        total = term
        for n in range(1, 500):
            ap += 1.0
            term *= x / ap
            total += term
            if fabs(term) < fabs(total) * 1e-17:
                break
        return 1.0 - pref * total
    b = x + 1.0 - a
    c = 1.0 / 1e-300
    d = 1.0 / b
    h = d
    for n in range(1, 500):
        an = -n * (n - a)
        b += 2.0
        d = an * d + b
        if fabs(d) < 1e-300:
            d = 1e-300
        c = b + an / c
        if fabs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < 1e-16:
            break
    return pref * h


def gamma_q(double a, double x):
    """Regularised upper incomplete gamma function (exposed for testing)."""
    return upper_gamma_q(a, x, lgamma(a))


cdef inline double tail_psi(Pot* p, double rho) nogil:
    return p.K * upper_gamma_q(p.inv_a, p.c * pow(rho, p.a), p.lg_inv_a)


cdef inline double tail_dpsi(Pot* p, double rho) nogil:
    return -p.P * exp(-p.c * pow(rho, p.a))


cdef double raw_psi(Pot* p, double rho) nogil:
    cdef double h, chi, core
    if p.kind == 1:
        return pow(rho, -p.s)
    if p.kind == 2:
        h = 0.5 * p.rho2
        if rho >= p.rho2:
            return tail_psi(p, rho)
        core = p.A / (rho * rho * rho)
        if rho <= h:
            return core
        chi = smooth_down((rho - h) / h)
        return chi * core + (1.0 - chi) * tail_psi(p, rho)
    return 0.0


cdef double raw_dpsi(Pot* p, double rho) nogil:
    cdef double h, chi, dchi, core, dcore
    if p.kind == 1:
        return -p.s * pow(rho, -p.s - 1.0)
    if p.kind == 2:
        h = 0.5 * p.rho2
        if rho >= p.rho2:
            return tail_dpsi(p, rho)
        core = p.A / (rho * rho * rho)
        dcore = -3.0 * core / rho
        if rho <= h:
            return dcore
        chi = smooth_down((rho - h) / h)
        dchi = smooth_down_d((rho - h) / h) / h
        return (dchi * (core - tail_psi(p, rho)) + chi * dcore
                + (1.0 - chi) * tail_dpsi(p, rho))
    return 0.0


cdef double c_psi(Pot* p, double rho) nogil:
    if p.R > 0.0:
        if rho >= p.R:
            return 0.0
        if rho > p.R - 1.0:
            return smooth_down(rho - (p.R - 1.0)) * raw_psi(p, rho)
    return raw_psi(p, rho)


cdef double c_dpsi(Pot* p, double rho) nogil:
    cdef double u
    if p.R > 0.0:
        if rho >= p.R:
            return 0.0
        if rho > p.R - 1.0:
            u = rho - (p.R - 1.0)
            return smooth_down(u) * raw_dpsi(p, rho) + smooth_down_d(u) * raw_psi(p, rho)
    return raw_dpsi(p, rho)


def psi_array(double[::1] params, rho):
    cdef Pot p = unpack(params)
    cdef double[::1] r = np.ascontiguousarray(rho, dtype=np.float64).ravel()
    out = np.empty(r.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(r.shape[0]):
        o[i] = c_psi(&p, r[i])
    return out.reshape(np.shape(rho))


def dpsi_array(double[::1] params, rho):
    cdef Pot p = unpack(params)
    cdef double[::1] r = np.ascontiguousarray(rho, dtype=np.float64).ravel()
    out = np.empty(r.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(r.shape[0]):
        o[i] = c_dpsi(&p, r[i])
    return out.reshape(np.shape(rho))


# ---------------------------------------------------------------- root finding

cdef inline double radial_f(Pot* p, double rho, double r, double w2) nogil:
    # 1 - 2 psi/|w|^2 - r^2/rho^2, the free part written to avoid cancellation
    return (rho - r) * (rho + r) / (rho * rho) - 2.0 * c_psi(p, rho) / w2


cdef inline double radial_df(Pot* p, double rho, double r, double w2) nogil:
    return -2.0 * c_dpsi(p, rho) / w2 + 2.0 * r * r / (rho * rho * rho)


cdef int c_closest(Pot* p, double r, double w2, double* out, double* resid) nogil:
    cdef double lo, hi, mid, f, fl, df, step, rho, scale
    cdef int it
    if p.kind == 0:
        out[0] = r
        resid[0] = 0.0
        return OK
    scale = fmax(r, 1.0)
    if r > 0.0:
        lo = fmax(r, 1e-12)
        fl = radial_f(p, lo, r, w2)
        if fl >= 0.0:
            out[0] = lo
            resid[0] = fl
            return OK
    else:
        lo = 0.0
    hi = 2.0 * scale
    while radial_f(p, hi, r, w2) <= 0.0:
        hi *= 2.0
        if hi > 1e6 * scale:
            out[0] = hi
            resid[0] = radial_f(p, hi, r, w2)
            return NO_BRACKET
    if r <= 0.0:
        lo = hi * 0.5
        it = 0
        while radial_f(p, lo, r, w2) >= 0.0:
            hi = lo
            lo *= 0.5
            it += 1
            if it > 2000:
                out[0] = lo
                resid[0] = radial_f(p, lo, r, w2)
                return NO_BRACKET
    # bisection to relative width 1e-3
    while hi - lo > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if radial_f(p, mid, r, w2) > 0.0:
            hi = mid
        else:
            lo = mid
    # safeguarded Newton polish
    rho = 0.5 * (lo + hi)
    for it in range(100):
        f = radial_f(p, rho, r, w2)
        if f > 0.0:
            hi = rho
        elif f < 0.0:
            lo = rho
        else:
            break
        df = radial_df(p, rho, r, w2)
        step = f / df if df > 0.0 else 0.0
        mid = rho - step
        if not (mid > lo and mid < hi) or df <= 0.0:
            mid = 0.5 * (lo + hi)
        if fabs(mid - rho) <= 1e-16 * rho:
            rho = mid
            break
        rho = mid
    f = radial_f(p, rho, r, w2)
    out[0] = rho
    resid[0] = f
    if fabs(f) > 1e-12:
        return TOL_NOT_MET
    return OK


def closest_approach(double[::1] params, double r, double speed):
    """Largest root of 1 - 2 psi/|w|^2 - r^2/rho^2; returns (rho_star, residual, status)."""
    cdef Pot p = unpack(params)
    cdef double rho, res
    cdef int st = c_closest(&p, r, speed * speed, &rho, &res)
    return rho, res, st


# ---------------------------------------------------------------- quadrature

cdef struct Ctx:
    Pot* pot
    int which       # 0 deflection, 1 sojourn time, 2 impulse
    double rho_star
    double psi_star
    double dpsi_star
    double beta
    double r
    double w2
    double u_small_limit


cdef inline double psi_drop(Ctx* c, double u, double x) nogil:
    # psi(rho_star) - psi(rho_star / x), accurate when rho is close to rho_star
    cdef double drho = c.rho_star * u * u / x
    cdef double rho = c.rho_star / x
    if drho < SIMPSON_SWITCH * c.rho_star:
        return -drho * (c.dpsi_star + 4.0 * c_dpsi(c.pot, c.rho_star + 0.5 * drho)
                        + c_dpsi(c.pot, rho)) / 6.0
    return c.psi_star - c_psi(c.pot, rho)


cdef double integrand(Ctx* c, double u) nogil:
    cdef double x, g, t, uu, rho
    if c.which == 2:
        # impulse: t in [0,1) -> u = t/(1-t), rho = r(1+u^2)
        t = u
        uu = t / (1.0 - t)
        rho = c.r * (1.0 + uu * uu)
        return -c_dpsi(c.pot, rho) * 2.0 / sqrt(2.0 + uu * uu) / ((1.0 - t) * (1.0 - t))
    if u < 1e-7:
        if c.which == 0:
            return c.u_small_limit
        return c.u_small_limit * c.rho_star
    x = 1.0 - u * u
    g = c.beta * c.beta * u * u * (2.0 - u * u) + 2.0 * psi_drop(c, u, x) / c.w2
    if g <= 0.0:
        if c.which == 0:
            return c.u_small_limit
        return c.u_small_limit * c.rho_star / (x * x)
    if c.which == 0:
        return 2.0 * u / sqrt(g)
    return 2.0 * c.rho_star * u / (x * x * sqrt(g))


cdef void gk21(Ctx* c, double a, double b, double* res, double* err) nogil:
    cdef double center = 0.5 * (a + b)
    cdef double half = 0.5 * (b - a)
    cdef double fc = integrand(c, center)
    cdef double resk = fc * WGK[10]
    cdef double resg = 0.0
    cdef double f1, f2, dx
    cdef int j
    for j in range(10):
        dx = half * XGK[j]
        f1 = integrand(c, center - dx)
        f2 = integrand(c, center + dx)
        resk += WGK[j] * (f1 + f2)
        if j % 2 == 1:
            resg += WG[j // 2] * (f1 + f2)
    res[0] = resk * half
    err[0] = fabs((resk - resg) * half)


cdef int adapt(Ctx* c, double* pts, int npts, double tol, double* total, double* errtot) nogil:
    cdef double[MAXINT] lo
    cdef double[MAXINT] hi
    cdef double[MAXINT] val
    cdef double[MAXINT] er
    cdef int n = 0, i, worst
    cdef double s = 0.0, e = 0.0, m, r1, e1, r2, e2
    for i in range(npts - 1):
        if pts[i + 1] > pts[i]:
            lo[n] = pts[i]
            hi[n] = pts[i + 1]
            gk21(c, lo[n], hi[n], &val[n], &er[n])
            s += val[n]
            e += er[n]
            n += 1
    while e > tol and n < MAXINT:
        worst = 0
        for i in range(1, n):
            if er[i] > er[worst]:
                worst = i
        m = 0.5 * (lo[worst] + hi[worst])
        if m <= lo[worst] or m >= hi[worst]:
            break
        gk21(c, lo[worst], m, &r1, &e1)
        gk21(c, m, hi[worst], &r2, &e2)
        lo[n] = m
        hi[n] = hi[worst]
        val[n] = r2
        er[n] = e2
        hi[worst] = m
        val[worst] = r1
        er[worst] = e1
        n += 1
        s = 0.0
        e = 0.0
        for i in range(n):
            s += val[i]
            e += er[i]
    total[0] = s
    errtot[0] = e
    if e > tol:
        return TOL_NOT_MET
    return OK


cdef int breakpoints(Pot* p, double rho_star, double u_hi, double* pts) nogil:
    # u-images of the seams of psi (blend window, cutoff window) above rho_star
    cdef double[4] cand
    cdef int nc = 0, n = 1, i, j
    cdef double u, tmp
    pts[0] = 0.0
    if p.kind == 2:
        cand[nc] = 0.5 * p.rho2
        nc += 1
        cand[nc] = p.rho2
        nc += 1
    if p.R > 0.0:
        cand[nc] = p.R - 1.0
        nc += 1
    for i in range(nc):
        if cand[i] > rho_star:
            u = sqrt(1.0 - rho_star / cand[i])
            if u < u_hi:
                pts[n] = u
                n += 1
    # sort interior points
    for i in range(1, n):
        for j in range(i + 1, n):
            if pts[j] < pts[i]:
                tmp = pts[i]
                pts[i] = pts[j]
                pts[j] = tmp
    pts[n] = u_hi
    return n + 1


cdef void setup_ctx(Ctx* c, Pot* p, double r, double w2, double rho_star) nogil:
    cdef double slope
    c.pot = p
    c.rho_star = rho_star
    c.psi_star = c_psi(p, rho_star)
    c.dpsi_star = c_dpsi(p, rho_star)
    c.beta = r / rho_star if rho_star > 0.0 else 0.0
    c.r = r
    c.w2 = w2
    slope = 2.0 * c.beta * c.beta - 2.0 * c.dpsi_star * rho_star / w2
    c.u_small_limit = 2.0 / sqrt(slope) if slope > 0.0 else 0.0


cdef int c_impulse(Pot* p, double r, double w2, double tol, double* theta, double* err) nogil:
    cdef Ctx c
    cdef double[4] pts
    cdef double val, e, pref
    cdef int n = 2, st
    c.pot = p
    c.which = 2
    c.r = r
    c.w2 = w2
    pts[0] = 0.0
    if p.R > 0.0:
        # u_max = sqrt(R/r - 1) mapped through t = u/(1+u)
        pts[1] = sqrt(p.R / r - 1.0)
        pts[1] = pts[1] / (1.0 + pts[1])
    else:
        pts[1] = 1.0
    pref = 2.0 * r / w2
    st = adapt(&c, pts, n, tol / pref, &val, &e)
    theta[0] = pref * val
    err[0] = pref * e
    return st


cdef int c_theta(Pot* p, double r, double w2, double tol, double* theta,
                 double* rho_star, double* err) nogil:
    cdef Ctx c
    cdef double[8] pts
    cdef double val, e, res, x_r, u_hi, free_part
    cdef int st, npts
    err[0] = 0.0
    if p.kind == 0 or (p.R > 0.0 and r >= p.R):
        theta[0] = 0.0
        rho_star[0] = r
        return OK
    st = c_closest(p, r, w2, rho_star, &res)
    if st == NO_BRACKET:
        theta[0] = 0.0
        return st
    if r <= 0.0:
        theta[0] = M_PI
        return OK
    if 2.0 * c_psi(p, r) / w2 < IMPULSE_SWITCH:
        return c_impulse(p, r, w2, tol, theta, err)
    setup_ctx(&c, p, r, w2, rho_star[0])
    c.which = 0
    if p.R > 0.0:
        x_r = rho_star[0] / p.R
        free_part = asin(c.beta * x_r)
        u_hi = sqrt(1.0 - x_r)
    else:
        free_part = 0.0
        u_hi = 1.0
    npts = breakpoints(p, rho_star[0], u_hi, pts)
    st = adapt(&c, pts, npts, 0.5 * tol / fmax(c.beta, 1e-300), &val, &e)
    theta[0] = M_PI - 2.0 * (free_part + c.beta * val)
    err[0] = 2.0 * c.beta * e
    if theta[0] < 0.0:
        theta[0] = 0.0
    elif theta[0] > M_PI:
        theta[0] = M_PI
    return st


def deviation_angle(double[::1] params, double r, double speed, double tol):
    """Returns (theta, rho_star, error_estimate, status)."""
    cdef Pot p = unpack(params)
    cdef double th, rs, er
    cdef int st = c_theta(&p, r, speed * speed, tol, &th, &rs, &er)
    return th, rs, er, st


def deviation_angles(double[::1] params, r, speed, double tol):
    """Vectorised deviation_angle; returns (theta, rho_star, err, status) arrays."""
    cdef Pot p = unpack(params)
    rr, ww = np.broadcast_arrays(np.asarray(r, dtype=np.float64),
                                 np.asarray(speed, dtype=np.float64))
    shape = rr.shape
    cdef double[::1] ra = np.ascontiguousarray(rr).ravel()
    cdef double[::1] wa = np.ascontiguousarray(ww).ravel()
    cdef Py_ssize_t n = ra.shape[0], i
    th = np.empty(n)
    rs = np.empty(n)
    er = np.empty(n)
    st = np.empty(n, dtype=np.int32)
    cdef double[::1] tv = th
    cdef double[::1] rv = rs
    cdef double[::1] ev = er
    cdef int[::1] sv = st
    with nogil:
        for i in range(n):
            sv[i] = c_theta(&p, ra[i], wa[i] * wa[i], tol, &tv[i], &rv[i], &ev[i])
    return th.reshape(shape), rs.reshape(shape), er.reshape(shape), st.reshape(shape)


def impulse_angle(double[::1] params, double r, double speed, double tol):
    """First-order (small-angle) deflection; returns (theta, err, status)."""
    cdef Pot p = unpack(params)
    cdef double th, er
    cdef int st
    if p.kind == 0 or r <= 0.0 or (p.R > 0.0 and r >= p.R):
        return 0.0, 0.0, OK
    st = c_impulse(&p, r, speed * speed, tol, &th, &er)
    return th, er, st


def scattering_time(double[::1] params, double r, double speed, double tol):
    """Time spent at separation < R; returns (tau, rho_star, err, status)."""
    cdef Pot p = unpack(params)
    cdef Ctx c
    cdef double[8] pts
    cdef double rho_star, res, val, e, u_hi, w2 = speed * speed
    cdef int st, npts
    if p.R <= 0.0:
        return float("inf"), 0.0, 0.0, OK
    if r >= p.R:
        return 0.0, r, 0.0, OK
    if p.kind == 0:
        return 2.0 * sqrt(p.R * p.R - r * r) / speed, r, 0.0, OK
    st = c_closest(&p, r, w2, &rho_star, &res)
    if st == NO_BRACKET:
        return 0.0, rho_star, 0.0, st
    setup_ctx(&c, &p, r, w2, rho_star)
    c.which = 1
    u_hi = sqrt(1.0 - rho_star / p.R)
    npts = breakpoints(&p, rho_star, u_hi, pts)
    st = adapt(&c, pts, npts, 0.5 * tol * speed, &val, &e)
    return 2.0 * val / speed, rho_star, 2.0 * e / speed, st


# ---------------------------------------------------------------- dynamics

cdef inline void accel(Pot* p, double eps, double inv_eps, double rho_cut,
                       double* x, double s, double[:, ::1] nbp, double[:, ::1] nbv,
                       double* acc) nogil:
    cdef Py_ssize_t j, n = nbp.shape[0]
    cdef double d0, d1, d2, dist, rho, f
    acc[0] = 0.0
    acc[1] = 0.0
    acc[2] = 0.0
    for j in range(n):
        d0 = x[0] - nbp[j, 0] - nbv[j, 0] * s
        d1 = x[1] - nbp[j, 1] - nbv[j, 1] * s
        d2 = x[2] - nbp[j, 2] - nbv[j, 2] * s
        d0 -= rint(d0)
        d1 -= rint(d1)
        d2 -= rint(d2)
        dist = sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        rho = dist * inv_eps
        if rho >= rho_cut or dist == 0.0:
            continue
        f = -c_dpsi(p, rho) * inv_eps / dist
        acc[0] += f * d0
        acc[1] += f * d1
        acc[2] += f * d2


cdef inline double min_sep(double* x, double s, double[:, ::1] nbp, double[:, ::1] nbv,
                           double a_exit, int* receding) nogil:
    # minimum image distance to the neighbour set; receding=1 when every
    # neighbour inside a_exit moves away
    cdef Py_ssize_t j, n = nbp.shape[0]
    cdef double d0, d1, d2, dist, best = 1e300
    receding[0] = 1
    for j in range(n):
        d0 = x[0] - nbp[j, 0] - nbv[j, 0] * s
        d1 = x[1] - nbp[j, 1] - nbv[j, 1] * s
        d2 = x[2] - nbp[j, 2] - nbv[j, 2] * s
        d0 -= rint(d0)
        d1 -= rint(d1)
        d2 -= rint(d2)
        dist = sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if dist < best:
            best = dist
    return best


def integrate_segment(double[::1] params, double eps, double rho_cut, x0, v0,
                      double t0, double t_end, double[:, ::1] nb_pos,
                      double[:, ::1] nb_vel, double a_exit, double tol,
                      double hmax, int max_steps, bint stop_on_exit, double h0=0.0):
    """Adaptive Dormand-Prince 5(4) integration of the tagged particle.

    Neighbour j sits at nb_pos[j] + nb_vel[j]*t (minimum image, unit torus).
    Integration stops at t_end, or, when stop_on_exit is set, at the first
    accepted step after which every neighbour is farther than a_exit.

    Returns (ts, xs, vs, accs, status, h_last); row 0 is the initial state.
    """
    cdef Pot p = unpack(params)
    cdef double inv_eps = 1.0 / eps
    cdef double atol_x = tol * eps, atol_v = tol, rtol = tol
    ts_a = np.empty(max_steps + 1)
    xs_a = np.empty((max_steps + 1, 3))
    vs_a = np.empty((max_steps + 1, 3))
    as_a = np.empty((max_steps + 1, 3))
    cdef double[::1] ts = ts_a
    cdef double[:, ::1] xs = xs_a
    cdef double[:, ::1] vs = vs_a
    cdef double[:, ::1] aa = as_a
    cdef double[3] x, v, xn, vn, xe, ve, tmpx, tmpv
    cdef double[7][3] kx
    cdef double[7][3] kv
    cdef double t = t0, h, err, sc, fac, dmin, hmin
    cdef int i, k, nsteps = 0, status = OK, receding, j
    cdef double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9
    cdef double a21 = 1.0 / 5
    cdef double a31 = 3.0 / 40, a32 = 9.0 / 40
    cdef double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9
    cdef double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729
    cdef double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176, a65 = -5103.0 / 18656
    cdef double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84
    cdef double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40
    for i in range(3):
        x[i] = x0[i]
        v[i] = v0[i]
    accel(&p, eps, inv_eps, rho_cut, x, t, nb_pos, nb_vel, kv[0])
    for i in range(3):
        kx[0][i] = v[i]
    ts[0] = t
    for i in range(3):
        xs[0, i] = x[i]
        vs[0, i] = v[i]
        aa[0, i] = kv[0][i]
    h = h0 if h0 > 0.0 else fmin(hmax, 1e-3 * eps)
    hmin = 1e-14 * fmax(fabs(t0), 1.0)
    with nogil:
        while t < t_end:
            if nsteps >= max_steps:
                status = MAX_STEPS
                break
            if t + h > t_end:
                h = t_end - t
            if h < hmin:
                status = STEP_UNDERFLOW
                break
            # stage 2
            for i in range(3):
                tmpx[i] = x[i] + h * a21 * kx[0][i]
                tmpv[i] = v[i] + h * a21 * kv[0][i]
            accel(&p, eps, inv_eps, rho_cut, tmpx, t + c2 * h, nb_pos, nb_vel, kv[1])
            for i in range(3):
                kx[1][i] = tmpv[i]
            # stage 3
            for i in range(3):
                tmpx[i] = x[i] + h * (a31 * kx[0][i] + a32 * kx[1][i])
                tmpv[i] = v[i] + h * (a31 * kv[0][i] + a32 * kv[1][i])
            accel(&p, eps, inv_eps, rho_cut, tmpx, t + c3 * h, nb_pos, nb_vel, kv[2])
            for i in range(3):
                kx[2][i] = tmpv[i]
            # stage 4
            for i in range(3):
                tmpx[i] = x[i] + h * (a41 * kx[0][i] + a42 * kx[1][i] + a43 * kx[2][i])
                tmpv[i] = v[i] + h * (a41 * kv[0][i] + a42 * kv[1][i] + a43 * kv[2][i])
            accel(&p, eps, inv_eps, rho_cut, tmpx, t + c4 * h, nb_pos, nb_vel, kv[3])
            for i in range(3):
                kx[3][i] = tmpv[i]
            # stage 5
            for i in range(3):
                tmpx[i] = x[i] + h * (a51 * kx[0][i] + a52 * kx[1][i] + a53 * kx[2][i] + a54 * kx[3][i])
                tmpv[i] = v[i] + h * (a51 * kv[0][i] + a52 * kv[1][i] + a53 * kv[2][i] + a54 * kv[3][i])
            accel(&p, eps, inv_eps, rho_cut, tmpx, t + c5 * h, nb_pos, nb_vel, kv[4])
            for i in range(3):
                kx[4][i] = tmpv[i]
            # stage 6
            for i in range(3):
                tmpx[i] = x[i] + h * (a61 * kx[0][i] + a62 * kx[1][i] + a63 * kx[2][i] + a64 * kx[3][i] + a65 * kx[4][i])
                tmpv[i] = v[i] + h * (a61 * kv[0][i] + a62 * kv[1][i] + a63 * kv[2][i] + a64 * kv[3][i] + a65 * kv[4][i])
            accel(&p, eps, inv_eps, rho_cut, tmpx, t + h, nb_pos, nb_vel, kv[5])
            for i in range(3):
                kx[5][i] = tmpv[i]
            # 5th order solution
            for i in range(3):
                xn[i] = x[i] + h * (b1 * kx[0][i] + b3 * kx[2][i] + b4 * kx[3][i] + b5 * kx[4][i] + b6 * kx[5][i])
                vn[i] = v[i] + h * (b1 * kv[0][i] + b3 * kv[2][i] + b4 * kv[3][i] + b5 * kv[4][i] + b6 * kv[5][i])
            accel(&p, eps, inv_eps, rho_cut, xn, t + h, nb_pos, nb_vel, kv[6])
            for i in range(3):
                kx[6][i] = vn[i]
            err = 0.0
            for i in range(3):
                xe[i] = h * (e1 * kx[0][i] + e3 * kx[2][i] + e4 * kx[3][i] + e5 * kx[4][i] + e6 * kx[5][i] + e7 * kx[6][i])
                ve[i] = h * (e1 * kv[0][i] + e3 * kv[2][i] + e4 * kv[3][i] + e5 * kv[4][i] + e6 * kv[5][i] + e7 * kv[6][i])
                sc = atol_x
                err += (xe[i] / sc) * (xe[i] / sc)
                sc = atol_v + rtol * fmax(fabs(v[i]), fabs(vn[i]))
                err += (ve[i] / sc) * (ve[i] / sc)
            err = sqrt(err / 6.0)
            if err <= 1.0:
                t += h
                for i in range(3):
                    x[i] = xn[i]
                    v[i] = vn[i]
                    kx[0][i] = kx[6][i]
                    kv[0][i] = kv[6][i]
                nsteps += 1
                ts[nsteps] = t
                for i in range(3):
                    xs[nsteps, i] = x[i]
                    vs[nsteps, i] = v[i]
                    aa[nsteps, i] = kv[0][i]
                fac = 5.0 if err == 0.0 else fmin(5.0, 0.9 * pow(err, -0.2))
                h = fmin(h * fac, hmax)
                if stop_on_exit:
                    dmin = min_sep(x, t, nb_pos, nb_vel, a_exit, &receding)
                    if dmin > a_exit:
                        break
            else:
                fac = fmax(0.2, 0.9 * pow(err, -0.2))
                h *= fac
    n = nsteps + 1
    return ts_a[:n], xs_a[:n], vs_a[:n], as_a[:n], status, h
