"""Adam and L-BFGS over flat parameter vectors."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; ``state`` is advanced in place."""
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ----------------------------------------------------------------------------
# L-BFGS


@dataclass
class LBFGSState:
    m: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 30
    curvature_eps: float = 1e-10
    f_noise_rel: float = 1e-13
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)
    f: float | None = None
    g: np.ndarray | None = None
    n_iter: int = 0
    n_evals: int = 0
    skipped: int = 0
    failed: bool = False


def two_loop(g: np.ndarray, s_hist, y_hist) -> np.ndarray:
    """Apply the inverse-Hessian approximation to ``g``."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def strong_wolfe(
    phi: Callable[[float], tuple[float, float, object]],
    f0: float,
    g0: float,
    step0: float = 1.0,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 30,
    f_noise: float = 0.0,
):
    """Bracketing/zoom line search for the strong Wolfe conditions.

    ``phi(t)`` returns ``(f, slope, payload)``. Returns ``(t, f, payload, evals)``
    on success, or ``(None, best_f, best_payload, evals)`` with the lowest
    sufficient-decrease point seen (``best_f`` is None if there was none).

    When loss changes fall below ``f_noise`` the Armijo test cannot be resolved
    in floating point; there the approximate form ``f <= f0 + f_noise`` with
    ``slope <= (1 - 2 c1) |g0|`` is accepted instead.
    """
    evals = 0
    best = (None, None, None)

    def armijo(t, f, g):
        if f <= f0 + c1 * t * g0:
            return True
        return f <= f0 + f_noise and g <= (1.0 - 2.0 * c1) * -g0

    def worse(f, f_ref):
        return f - f_ref > f_noise if f_noise > 0 else f >= f_ref

    def note(t, f, g, payload):
        nonlocal best
        if armijo(t, f, g) and (best[1] is None or f < best[1]):
            best = (t, f, payload)

    def zoom(lo, flo, glo, hi, fhi, ghi):
        nonlocal evals
        while evals < max_evals:
            if f_noise > 0 and abs(fhi - flo) <= f_noise and math.isfinite(ghi) and ghi != glo:
                # losses indistinguishable: interpolate the slopes only
                t = lo - glo * (hi - lo) / (ghi - glo)
            else:
                t = _cubic_min(lo, flo, glo, hi, fhi, ghi)
            a, b = min(lo, hi), max(lo, hi)
            width = b - a
            if t is None or not (a + 0.1 * width <= t <= b - 0.1 * width):
                t = 0.5 * (lo + hi)
            f, g, payload = phi(t)
            evals += 1
            note(t, f, g, payload)
            if not armijo(t, f, g) or worse(f, flo):
                hi, fhi, ghi = t, f, g
            else:
                if abs(g) <= -c2 * g0:
                    return t, f, payload
                if g * (hi - lo) >= 0:
                    hi, fhi, ghi = lo, flo, glo
                lo, flo, glo = t, f, g
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    t_prev, f_prev, g_prev = 0.0, f0, g0
    t = step0
    while evals < max_evals:
        f, g, payload = phi(t)
        evals += 1
        if not math.isfinite(f):
            # overflowed trial point: treat as too long and bisect back
            f, g = math.inf, math.nan
        note(t, f, g, payload)
        if not armijo(t, f, g) or (evals > 1 and worse(f, f_prev)):
            return _finish(zoom(t_prev, f_prev, g_prev, t, f, g), best, evals)
        if abs(g) <= -c2 * g0:
            return t, f, payload, evals
        if g >= 0:
            return _finish(zoom(t, f, g, t_prev, f_prev, g_prev), best, evals)
        t_prev, f_prev, g_prev = t, f, g
        t *= 2.0
    return None, best[1], best[2], evals


def _finish(res, best, evals):
    if res is not None:
        t, f, payload = res
        return t, f, payload, evals
    return None, best[1], best[2], evals


def lbfgs_step(state: LBFGSState, params: np.ndarray, loss_fn: LossFn) -> np.ndarray:
    """One L-BFGS iteration. ``state.f``/``state.g`` cache the value at ``params``.

    If the line search fails the state is marked ``failed`` and the best
    sufficient-decrease point (or the unchanged parameters) is returned.
    """
    if state.g is None:
        state.f, state.g = loss_fn(params)
        state.n_evals += 1
    f0, g0 = float(state.f), state.g
    if not np.any(g0):
        return params
    d = -two_loop(g0, state.s_hist, state.y_hist)
    slope0 = float(g0 @ d)
    if not slope0 < 0:
        state.s_hist.clear()
        state.y_hist.clear()
        d = -g0
        slope0 = float(g0 @ d)
    step0 = 1.0 if state.s_hist else min(1.0, 1.0 / float(np.abs(g0).sum()))

    def phi(t):
        x = params + t * d
        f, g = loss_fn(x)
        return float(f), float(g @ d), (x, g)

    noise = state.f_noise_rel * (1.0 + abs(f0))
    t, f_new, payload, evals = strong_wolfe(phi, f0, slope0, step0, state.c1, state.c2, state.max_ls, noise)
    state.n_evals += evals
    if payload is None or (t is None and not f_new < f0):
        state.failed = True
        return params
    x_new, g_new = payload
    if t is None:
        state.failed = True
    s = x_new - params
    y = g_new - g0
    # scale-free curvature test: tiny late steps still carry useful pairs
    if float(s @ y) > state.curvature_eps * float(np.linalg.norm(s) * np.linalg.norm(y)):
        state.s_hist.append(s)
        state.y_hist.append(y)
        if len(state.s_hist) > state.m:
            state.s_hist.popleft()
            state.y_hist.popleft()
    else:
        state.skipped += 1
    state.f, state.g = f_new, g_new
    state.n_iter += 1
    return x_new


def lbfgs_minimize(
    loss_fn: LossFn,
    x0: np.ndarray,
    max_iter: int = 100,
    gtol: float = 1e-10,
    state: LBFGSState | None = None,
    callback: Callable[[int, float, np.ndarray], None] | None = None,
):
    """Run L-BFGS until ``||g||_2 < gtol``, ``max_iter`` or line-search failure.

    Returns ``(x, state, trace)`` where ``trace`` holds the loss after each accepted step.
    """
    state = state or LBFGSState()
    x = np.array(x0, dtype=np.float64, copy=True)
    trace = []
    for it in range(max_iter):
        if state.g is not None and float(np.linalg.norm(state.g)) < gtol:
            break
        x_new = lbfgs_step(state, x, loss_fn)
        if x_new is x:
            break
        x = x_new
        trace.append(float(state.f))
        if callback is not None:
            callback(it, float(state.f), x)
        if state.failed:
            break
    return x, state, trace
