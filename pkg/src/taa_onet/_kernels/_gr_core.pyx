# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled nodewise equilibrium and distension solves.

Scalar per-node mirror of ``_gr_py``: same residuals, same damped Newton,
same scan-and-bisect fallback and the same distension bisection.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs, fmax, fmin, ceil, log2, NAN

cnp.import_array()

cdef enum:
    N_CONSTS = 26
    C_CE = 0
    C_C1M = 1
    C_C2M = 2
    C_C1C = 3
    C_C2C = 4
    C_GET = 5
    C_GEZ = 6
    C_GER = 7
    C_GM = 8
    C_GC = 9
    C_PHIE = 10
    C_PHIM = 11
    C_PHIC = 12
    C_BT = 13
    C_BZ = 14
    C_BD = 15
    C_SIN2 = 16
    C_COS2 = 17
    C_AO = 18
    C_HO = 19
    C_SIGO = 20
    C_FORM = 21
    C_LAMLO = 22
    C_LAMHI = 23
    C_GLO = 24
    C_GHI = 25

cdef double NEWTON_TOL = 1e-12
cdef double ACCEPT_TOL = 1e-10
cdef int MAX_NEWTON = 100
cdef double FD_STEP = 1e-7
cdef double DIST_LO = 0.5
cdef double DIST_HI = 3.0
cdef double DIST_TOL = 1e-12


cdef inline double _fiber(double lam, double c1, double c2, int form) nogil:
    cdef double e
    if lam <= 1.0:
        return 0.0
    if form == 0:
        e = lam * lam - 1.0
        return c1 * lam * lam * e * exp(c2 * e * e)
    e = lam - 1.0
    return 0.5 * c1 * lam * e * exp(c2 * e * e)


cdef inline void _stress(double lam_t, double lam_z, double lam_r, double ce,
                         double fe, double fm, double fc, double inc_t, double inc_z,
                         const double* k, double* s_tt, double* s_zz, double* p) nogil:
    cdef int form = <int>k[C_FORM]
    cdef double se_t = ce * (k[C_GET] * lam_t) * (k[C_GET] * lam_t)
    cdef double se_z = ce * (k[C_GEZ] * lam_z) * (k[C_GEZ] * lam_z)
    cdef double se_r = ce * (k[C_GER] * lam_r) * (k[C_GER] * lam_r)
    cdef double it2 = inc_t * inc_t
    cdef double iz2 = inc_z * inc_z
    cdef double sm = _fiber(k[C_GM] * inc_t, k[C_C1M], k[C_C2M], form)
    cdef double sct = _fiber(k[C_GC] * inc_t, k[C_C1C], k[C_C2C], form)
    cdef double scz = _fiber(k[C_GC] * inc_z, k[C_C1C], k[C_C2C], form)
    cdef double ld2 = it2 * k[C_SIN2] + iz2 * k[C_COS2]
    cdef double scd = _fiber(k[C_GC] * sqrt(ld2), k[C_C1C], k[C_C2C], form)
    cdef double mt = it2 * k[C_SIN2] / ld2
    p[0] = fe * se_r
    s_tt[0] = fe * se_t + fm * sm + fc * (k[C_BT] * sct + k[C_BD] * scd * mt) - p[0]
    s_zz[0] = fe * se_z + fc * (k[C_BZ] * scz + k[C_BD] * scd * (1.0 - mt)) - p[0]


cdef inline void _residuals(double lam, double g, double ce, double delta, double p_gr,
                            const double* k, double* r1, double* r2) nogil:
    cdef double jac = k[C_PHIE] + g * (k[C_PHIM] + k[C_PHIC])
    cdef double s_tt, s_zz, p
    _stress(lam, 1.0, jac / lam, ce, k[C_PHIE] / jac, g * k[C_PHIM] / jac,
            g * k[C_PHIC] / jac, 1.0, 1.0, k, &s_tt, &s_zz, &p)
    r1[0] = (s_tt - p_gr * k[C_AO] * lam * lam / (jac * k[C_HO])) / k[C_SIGO]
    r2[0] = ((1.0 - delta) * (s_tt + s_zz) / 3.0 - k[C_SIGO]) / k[C_SIGO]


cdef inline double _clip(double x, double lo, double hi) nogil:
    return fmin(fmax(x, lo), hi)


cdef void _newton(double ce, double delta, double p_gr, const double* k,
                  double* lam, double* g, double* r1, double* r2) nogil:
    cdef double f1, f2, hl, hg, a1, a2, b1, b2, j11, j12, j21, j22, det
    cdef double dl, dg, merit, alpha, tl, tg, t1, t2
    cdef int it, ls, accepted
    for it in range(MAX_NEWTON):
        _residuals(lam[0], g[0], ce, delta, p_gr, k, &f1, &f2)
        if fmax(fabs(f1), fabs(f2)) <= NEWTON_TOL:
            break
        hl = FD_STEP * fmax(fabs(lam[0]), 1.0)
        hg = FD_STEP * fmax(fabs(g[0]), 1.0)
        _residuals(lam[0] + hl, g[0], ce, delta, p_gr, k, &a1, &a2)
        _residuals(lam[0] - hl, g[0], ce, delta, p_gr, k, &b1, &b2)
        j11 = (a1 - b1) / (2 * hl)
        j21 = (a2 - b2) / (2 * hl)
        _residuals(lam[0], g[0] + hg, ce, delta, p_gr, k, &a1, &a2)
        _residuals(lam[0], g[0] - hg, ce, delta, p_gr, k, &b1, &b2)
        j12 = (a1 - b1) / (2 * hg)
        j22 = (a2 - b2) / (2 * hg)
        det = j11 * j22 - j12 * j21
        if det == 0.0:
            break
        dl = (-f1 * j22 + f2 * j12) / det
        dg = (-f2 * j11 + f1 * j21) / det
        if not (fabs(dl) < 1e300 and fabs(dg) < 1e300):
            break
        merit = f1 * f1 + f2 * f2
        alpha = 1.0
        accepted = 0
        for ls in range(40):
            tl = _clip(lam[0] + alpha * dl, k[C_LAMLO], k[C_LAMHI])
            tg = _clip(g[0] + alpha * dg, k[C_GLO], k[C_GHI])
            _residuals(tl, tg, ce, delta, p_gr, k, &t1, &t2)
            if t1 * t1 + t2 * t2 < merit:
                lam[0] = tl
                g[0] = tg
                accepted = 1
                break
            alpha *= 0.5
        if not accepted:
            break
    _residuals(lam[0], g[0], ce, delta, p_gr, k, r1, r2)


cdef double _r2(double lam, double g, double ce, double delta, double p_gr, const double* k) nogil:
    cdef double r1, r2
    _residuals(lam, g, ce, delta, p_gr, k, &r1, &r2)
    return r2


cdef double _r1(double lam, double g, double ce, double delta, double p_gr, const double* k) nogil:
    cdef double r1, r2
    _residuals(lam, g, ce, delta, p_gr, k, &r1, &r2)
    return r1


cdef int _growth_root(double lam, double ce, double delta, double p_gr, const double* k,
                      double* out) nogil:
    """Smallest sign change of the second residual on a geometric growth grid."""
    cdef int n_scan = 64
    cdef int i, it
    cdef double ratio = (k[C_GHI] / k[C_GLO]) ** (1.0 / (n_scan - 1))
    cdef double g0, g1, v0, v1, lo, hi, flo, mid, fm
    g0 = k[C_GLO]
    v0 = _r2(lam, g0, ce, delta, p_gr, k)
    for i in range(n_scan - 1):
        g1 = k[C_GHI] if i == n_scan - 2 else k[C_GLO] * ratio ** (i + 1)
        v1 = _r2(lam, g1, ce, delta, p_gr, k)
        if v0 == 0.0:
            out[0] = g0
            return 1
        if (v0 < 0.0) != (v1 < 0.0):
            lo = g0
            hi = g1
            flo = v0
            for it in range(200):
                mid = 0.5 * (lo + hi)
                if hi - lo <= 1e-15:
                    break
                fm = _r2(lam, mid, ce, delta, p_gr, k)
                if (fm < 0.0) == (flo < 0.0):
                    lo = mid
                    flo = fm
                else:
                    hi = mid
            out[0] = 0.5 * (lo + hi)
            return 1
        g0 = g1
        v0 = v1
    return 0


cdef int _outer(double lam, double ce, double delta, double p_gr, const double* k,
                double* f, double* g) nogil:
    if not _growth_root(lam, ce, delta, p_gr, k, g):
        return 0
    f[0] = _r1(lam, g[0], ce, delta, p_gr, k)
    return 1


cdef int _fallback(double ce, double delta, double p_gr, const double* k,
                   double* lam_out, double* g_out) nogil:
    cdef int n_scan = 161
    cdef int i, it, have_prev, have
    cdef double step = (k[C_LAMHI] - k[C_LAMLO]) / (n_scan - 1)
    cdef double prev_l, prev_f, lam, f, gg, lo, hi, flo, mid, fm
    prev_l = k[C_LAMLO]
    have_prev = _outer(prev_l, ce, delta, p_gr, k, &prev_f, &gg)
    for i in range(1, n_scan):
        lam = k[C_LAMLO] + i * step
        have = _outer(lam, ce, delta, p_gr, k, &f, &gg)
        if have_prev and have and ((prev_f < 0.0) != (f < 0.0)):
            lo = prev_l
            hi = lam
            flo = prev_f
            for it in range(100):
                mid = 0.5 * (lo + hi)
                if not _outer(mid, ce, delta, p_gr, k, &fm, &gg):
                    break
                if (fm < 0.0) == (flo < 0.0):
                    lo = mid
                    flo = fm
                else:
                    hi = mid
                if hi - lo <= 1e-14:
                    break
            lam_out[0] = 0.5 * (lo + hi)
            if _growth_root(lam_out[0], ce, delta, p_gr, k, g_out):
                return 1
        prev_l = lam
        prev_f = f
        have_prev = have
    return 0


def equilibrium(ce, delta, double p_gr, k):
    """Solve both equilibrium residuals at every node; see ``_gr_py.equilibrium``."""
    cdef cnp.ndarray[double, ndim=1, mode="c"] ce_a = np.ascontiguousarray(ce, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] de_a = np.ascontiguousarray(delta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] k_a = np.ascontiguousarray(k, dtype=np.float64)
    cdef Py_ssize_t n = ce_a.shape[0]
    if k_a.shape[0] != N_CONSTS:
        raise ValueError("constant vector has the wrong length")
    lam = np.ones(n)
    growth = np.ones(n)
    r1 = np.empty(n)
    r2 = np.empty(n)
    status = np.zeros(n, dtype=np.int32)
    cdef double[::1] lv = lam, gv = growth, r1v = r1, r2v = r2
    cdef int[::1] sv = status
    cdef const double* kp = &k_a[0]
    cdef Py_ssize_t i
    cdef double gl, gg
    with nogil:
        for i in range(n):
            _newton(ce_a[i], de_a[i], p_gr, kp, &lv[i], &gv[i], &r1v[i], &r2v[i])
            if fmax(fabs(r1v[i]), fabs(r2v[i])) > ACCEPT_TOL:
                sv[i] = -1
                if _fallback(ce_a[i], de_a[i], p_gr, kp, &gl, &gg):
                    lv[i] = gl
                    gv[i] = gg
                    _newton(ce_a[i], de_a[i], p_gr, kp, &lv[i], &gv[i], &r1v[i], &r2v[i])
                    if fmax(fabs(r1v[i]), fabs(r2v[i])) <= ACCEPT_TOL:
                        sv[i] = 1
    return lam, growth, r1, r2, status


cdef inline double _dist_res(double x, double lam, double g, double ce, double pressure,
                             const double* k) nogil:
    cdef double jac = k[C_PHIE] + g * (k[C_PHIM] + k[C_PHIC])
    cdef double s_tt, s_zz, p
    _stress(lam * x, 1.0, jac / (lam * x), ce, k[C_PHIE] / jac, g * k[C_PHIM] / jac,
            g * k[C_PHIC] / jac, x, 1.0, k, &s_tt, &s_zz, &p)
    return (s_tt - pressure * k[C_AO] * lam * lam * x * x / (jac * k[C_HO])) / k[C_SIGO]


def distension(lam, growth, ce, double pressure, k):
    """Incremental circumferential stretch at ``pressure``; see ``_gr_py.distension``."""
    cdef cnp.ndarray[double, ndim=1, mode="c"] la = np.ascontiguousarray(lam, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] ga = np.ascontiguousarray(growth, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] ca = np.ascontiguousarray(ce, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] k_a = np.ascontiguousarray(k, dtype=np.float64)
    cdef Py_ssize_t n = la.shape[0]
    x = np.empty(n)
    status = np.zeros(n, dtype=np.int32)
    cdef double[::1] xv = x
    cdef int[::1] sv = status
    cdef const double* kp = &k_a[0]
    cdef int n_iter = <int>ceil(log2((DIST_HI - DIST_LO) / DIST_TOL))
    cdef Py_ssize_t i
    cdef int it
    cdef double lo, hi, mid
    with nogil:
        for i in range(n):
            if not (_dist_res(DIST_LO, la[i], ga[i], ca[i], pressure, kp) < 0.0
                    and _dist_res(DIST_HI, la[i], ga[i], ca[i], pressure, kp) > 0.0):
                sv[i] = -1
                xv[i] = NAN
                continue
            lo = DIST_LO
            hi = DIST_HI
            for it in range(n_iter):
                mid = 0.5 * (lo + hi)
                if _dist_res(mid, la[i], ga[i], ca[i], pressure, kp) < 0.0:
                    lo = mid
                else:
                    hi = mid
            xv[i] = 0.5 * (lo + hi)
    return x, status
