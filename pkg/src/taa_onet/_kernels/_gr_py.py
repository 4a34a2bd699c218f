"""NumPy implementation of the nodewise equilibrium and distension solves.

Every routine works on whole node arrays at once. The compiled module
``_gr_core`` implements the same algorithms one node at a time; the two agree
to solver tolerance, not bit for bit.

``consts`` is the flat float64 vector built by ``taa_onet.vessel.pack_constants``;
the ``C_*`` indices below name its slots.
"""
from __future__ import annotations

import math

import numpy as np

(
    C_CE, C_C1M, C_C2M, C_C1C, C_C2C,
    C_GET, C_GEZ, C_GER, C_GM, C_GC,
    C_PHIE, C_PHIM, C_PHIC,
    C_BT, C_BZ, C_BD, C_SIN2, C_COS2,
    C_AO, C_HO, C_SIGO, C_FORM,
    C_LAMLO, C_LAMHI, C_GLO, C_GHI,
) = range(26)
N_CONSTS = 26

NEWTON_TOL = 1e-12
ACCEPT_TOL = 1e-10
MAX_NEWTON = 100
FD_STEP = 1e-7
DIST_LO = 0.5
DIST_HI = 3.0
DIST_TOL = 1e-12

ST_NEWTON = 0
ST_FALLBACK = 1
ST_FAILED = -1


def fiber_stress(stretch, c1, c2, form):
    """Cauchy stress ``lam * dW/dlam`` of one fiber family, tension only."""
    lam = np.asarray(stretch, dtype=float)
    if form == 0:
        e = lam * lam - 1.0
        s = c1 * lam * lam * e * np.exp(c2 * e * e)
    else:
        e = lam - 1.0
        s = 0.5 * c1 * lam * e * np.exp(c2 * e * e)
    return np.where(lam > 1.0, s, 0.0)


def stress(lam_t, lam_z, lam_r, ce, fe, fm, fc, inc_t, inc_z, k):
    """In-plane Cauchy stresses with the radial stress eliminated.

    ``lam_*`` are elastin stretches from the original in vivo state, ``fe``,
    ``fm``, ``fc`` the current mass fractions, and ``inc_t``/``inc_z`` the
    stretches of the fiber families relative to their deposition configuration.
    Returns ``(s_tt, s_zz, p)`` where ``p`` is the removed radial extra stress.
    """
    form = int(k[C_FORM])
    se_t = ce * (k[C_GET] * lam_t) ** 2
    se_z = ce * (k[C_GEZ] * lam_z) ** 2
    se_r = ce * (k[C_GER] * lam_r) ** 2
    it2 = inc_t * inc_t
    iz2 = inc_z * inc_z
    sm = fiber_stress(k[C_GM] * inc_t, k[C_C1M], k[C_C2M], form)
    sct = fiber_stress(k[C_GC] * inc_t, k[C_C1C], k[C_C2C], form)
    scz = fiber_stress(k[C_GC] * inc_z, k[C_C1C], k[C_C2C], form)
    ld2 = it2 * k[C_SIN2] + iz2 * k[C_COS2]
    scd = fiber_stress(k[C_GC] * np.sqrt(ld2), k[C_C1C], k[C_C2C], form)
    mt = it2 * k[C_SIN2] / ld2
    p = fe * se_r
    s_tt = fe * se_t + fm * sm + fc * (k[C_BT] * sct + k[C_BD] * scd * mt) - p
    s_zz = fe * se_z + fc * (k[C_BZ] * scz + k[C_BD] * scd * (1.0 - mt)) - p
    return s_tt, s_zz, p


def _fractions(growth, k):
    jac = k[C_PHIE] + growth * (k[C_PHIM] + k[C_PHIC])
    return jac, k[C_PHIE] / jac, growth * k[C_PHIM] / jac, growth * k[C_PHIC] / jac


def residuals(lam, growth, ce, delta, p_gr, k):
    """Scaled mechanical and mechanobiological equilibrium residuals."""
    jac, fe, fm, fc = _fractions(growth, k)
    s_tt, s_zz, _ = stress(lam, 1.0, jac / lam, ce, fe, fm, fc, 1.0, 1.0, k)
    sig_o = k[C_SIGO]
    r1 = (s_tt - p_gr * k[C_AO] * lam * lam / (jac * k[C_HO])) / sig_o
    r2 = ((1.0 - delta) * (s_tt + s_zz) / 3.0 - sig_o) / sig_o
    return r1, r2


def _box(lam, growth, k):
    return np.clip(lam, k[C_LAMLO], k[C_LAMHI]), np.clip(growth, k[C_GLO], k[C_GHI])


def _newton(ce, delta, p_gr, k, lam, growth):
    lam = lam.copy()
    growth = growth.copy()
    n = lam.shape[0]
    done = np.zeros(n, dtype=bool)
    stalled = np.zeros(n, dtype=bool)
    for _ in range(MAX_NEWTON):
        r1, r2 = residuals(lam, growth, ce, delta, p_gr, k)
        done = np.maximum(np.abs(r1), np.abs(r2)) <= NEWTON_TOL
        act = np.flatnonzero(~done & ~stalled)
        if act.size == 0:
            break
        la, ga, ca, da = lam[act], growth[act], ce[act], delta[act]
        f1, f2 = r1[act], r2[act]
        hl = FD_STEP * np.maximum(np.abs(la), 1.0)
        hg = FD_STEP * np.maximum(np.abs(ga), 1.0)
        a1, a2 = residuals(la + hl, ga, ca, da, p_gr, k)
        b1, b2 = residuals(la - hl, ga, ca, da, p_gr, k)
        j11, j21 = (a1 - b1) / (2 * hl), (a2 - b2) / (2 * hl)
        a1, a2 = residuals(la, ga + hg, ca, da, p_gr, k)
        b1, b2 = residuals(la, ga - hg, ca, da, p_gr, k)
        j12, j22 = (a1 - b1) / (2 * hg), (a2 - b2) / (2 * hg)
        det = j11 * j22 - j12 * j21
        with np.errstate(divide="ignore", invalid="ignore"):
            dl = (-f1 * j22 + f2 * j12) / det
            dg = (-f2 * j11 + f1 * j21) / det
        bad = ~np.isfinite(dl) | ~np.isfinite(dg)
        dl[bad] = 0.0
        dg[bad] = 0.0
        merit = f1 * f1 + f2 * f2
        alpha = np.ones(act.size)
        accepted = np.zeros(act.size, dtype=bool)
        for _ in range(40):
            pend = ~accepted
            if not pend.any():
                break
            tl, tg = _box(la + alpha * dl, ga + alpha * dg, k)
            t1, t2 = residuals(tl, tg, ca, da, p_gr, k)
            ok = pend & (t1 * t1 + t2 * t2 < merit)
            la = np.where(ok, tl, la)
            ga = np.where(ok, tg, ga)
            accepted |= ok
            alpha = np.where(accepted, alpha, 0.5 * alpha)
        stalled[act[~accepted | bad]] = True
        lam[act] = la
        growth[act] = ga
    r1, r2 = residuals(lam, growth, ce, delta, p_gr, k)
    return lam, growth, r1, r2


def _bisect(fun, lo, hi, tol, max_iter=200):
    flo = fun(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            break
        fm = fun(mid)
        if (fm < 0.0) == (flo < 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _scalar_res(lam, growth, ce, delta, p_gr, k):
    r1, r2 = residuals(np.array([lam]), np.array([growth]), np.array([ce]), np.array([delta]), p_gr, k)
    return float(r1[0]), float(r2[0])


def _growth_root(lam, ce, delta, p_gr, k, n_scan=64):
    """Smallest growth factor with a sign change of the second residual, or None."""
    g_lo, g_hi = k[C_GLO], k[C_GHI]
    grid = np.geomspace(g_lo, g_hi, n_scan)
    vals = [_scalar_res(lam, gg, ce, delta, p_gr, k)[1] for gg in grid]
    for i in range(n_scan - 1):
        if vals[i] == 0.0:
            return float(grid[i])
        if (vals[i] < 0.0) != (vals[i + 1] < 0.0):
            return _bisect(lambda gg: _scalar_res(lam, gg, ce, delta, p_gr, k)[1], grid[i], grid[i + 1], 1e-15)
    return None


def fallback_scalar(ce, delta, p_gr, k, n_scan=161):
    """Grid scan in stretch plus nested bisection; returns ``(lam, g)`` or None."""
    lams = np.linspace(k[C_LAMLO], k[C_LAMHI], n_scan)

    def outer(lam):
        gg = _growth_root(lam, ce, delta, p_gr, k)
        if gg is None:
            return None, None
        return _scalar_res(lam, gg, ce, delta, p_gr, k)[0], gg

    prev_l, (prev_f, _) = lams[0], outer(lams[0])
    for lam in lams[1:]:
        f, _ = outer(lam)
        if prev_f is not None and f is not None and (prev_f < 0.0) != (f < 0.0):
            lo, hi, flo = prev_l, lam, prev_f
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                fm, _ = outer(mid)
                if fm is None:
                    break
                if (fm < 0.0) == (flo < 0.0):
                    lo, flo = mid, fm
                else:
                    hi = mid
                if hi - lo <= 1e-14:
                    break
            lam_s = 0.5 * (lo + hi)
            g_s = _growth_root(lam_s, ce, delta, p_gr, k)
            if g_s is not None:
                return lam_s, g_s
        prev_l, prev_f = lam, f
    return None


def equilibrium(ce, delta, p_gr, k):
    """Solve both equilibrium residuals at every node.

    Returns ``(lam, g, r1, r2, status)`` arrays.
    """
    ce = np.ascontiguousarray(ce, dtype=float)
    delta = np.ascontiguousarray(delta, dtype=float)
    n = ce.shape[0]
    lam, growth, r1, r2 = _newton(ce, delta, p_gr, k, np.ones(n), np.ones(n))
    status = np.full(n, ST_NEWTON, dtype=np.int32)
    bad = np.flatnonzero(np.maximum(np.abs(r1), np.abs(r2)) > ACCEPT_TOL)
    for i in bad:
        guess = fallback_scalar(ce[i], delta[i], p_gr, k)
        status[i] = ST_FAILED
        if guess is None:
            continue
        li, gi, s1, s2 = _newton(ce[i : i + 1], delta[i : i + 1], p_gr, k, np.array([guess[0]]), np.array([guess[1]]))
        lam[i], growth[i], r1[i], r2[i] = li[0], gi[0], s1[0], s2[0]
        if max(abs(s1[0]), abs(s2[0])) <= ACCEPT_TOL:
            status[i] = ST_FALLBACK
    return lam, growth, r1, r2, status


def distension_residual(x, lam, growth, ce, pressure, k):
    jac, fe, fm, fc = _fractions(growth, k)
    s_tt, _, _ = stress(lam * x, 1.0, jac / (lam * x), ce, fe, fm, fc, x, 1.0, k)
    return (s_tt - pressure * k[C_AO] * lam * lam * x * x / (jac * k[C_HO])) / k[C_SIGO]


def distension(lam, growth, ce, pressure, k):
    """Incremental circumferential stretch at ``pressure`` about evolved states.

    Returns ``(x, status)``; ``status`` is -1 where ``[0.5, 3]`` does not bracket a root.
    """
    lam = np.ascontiguousarray(lam, dtype=float)
    growth = np.ascontiguousarray(growth, dtype=float)
    ce = np.ascontiguousarray(ce, dtype=float)
    n = lam.shape[0]
    lo = np.full(n, DIST_LO)
    hi = np.full(n, DIST_HI)
    flo = distension_residual(lo, lam, growth, ce, pressure, k)
    fhi = distension_residual(hi, lam, growth, ce, pressure, k)
    status = np.where((flo < 0.0) & (fhi > 0.0), 0, ST_FAILED).astype(np.int32)
    n_iter = int(math.ceil(math.log2((DIST_HI - DIST_LO) / DIST_TOL)))
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        fm = distension_residual(mid, lam, growth, ce, pressure, k)
        neg = fm < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    x = 0.5 * (lo + hi)
    x[status != 0] = np.nan
    return x, status
