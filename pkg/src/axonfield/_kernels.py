"""Hot loops, compiled with numba when available.

Setting ``AXONFIELD_NO_JIT=1`` selects the plain numpy/python versions.
Both paths compute the same arithmetic; the test suite checks they agree.
"""
from __future__ import annotations

import logging
import math
import os

import numpy as np

logger = logging.getLogger(__name__)

NO_JIT_ENV_VAR = "AXONFIELD_NO_JIT"

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

USE_JIT = _HAVE_NUMBA and os.environ.get(NO_JIT_ENV_VAR, "").strip().lower() not in (
    "1", "true", "yes", "on")

# below this |x| the Bernoulli function uses its Taylor series
_BERN_SMALL = 1e-6


# ---------------------------------------------------------------------------
# scalar kernels; the same source is compiled by numba or run as plain python

def _build(jit):
    @jit
    def bern(x):
        if abs(x) < _BERN_SMALL:
            return 1.0 - 0.5 * x + x * x / 12.0
        if x > 700.0:
            return 0.0
        return x / math.expm1(x)

    @jit
    def dbern(x):
        if abs(x) < _BERN_SMALL:
            return -0.5 + x / 6.0
        if x > 700.0:
            return 0.0
        em = math.expm1(x)
        return (em - x * (em + 1.0)) / (em * em)

    @jit
    def rates(vm):
        """HH rate constants (1/ms) at membrane potential ``vm`` (mV)."""
        am = bern(-(vm + 30.0) / 10.0)
        bm = 4.0 * math.exp(-(vm + 55.0) / 18.0)
        ah = 0.07 * math.exp(-(vm + 44.0) / 20.0)
        bh = 1.0 / (1.0 + math.exp(-(vm + 14.0) / 10.0))
        an = 0.1 * bern(-(vm + 34.0) / 10.0)
        bn = 0.125 * math.exp(-(vm + 44.0) / 80.0)
        return am, bm, ah, bh, an, bn

    @jit
    def rhs(V, m, h, n, i_ext, p):
        # p = (g_Na, g_NaL, g_K, g_KL, V_Na, V_K, C_m, phi_per_s, I_bal)
        am, bm, ah, bh, an, bn = rates(V * 1e3)
        i_na = (p[0] * m * m * m * h + p[1]) * (V - p[4])
        i_k = (p[2] * n * n * n * n + p[3]) * (V - p[5])
        dV = -(i_ext + i_na + i_k + p[8]) / p[6]
        dm = p[7] * (am * (1.0 - m) - bm * m)
        dh = p[7] * (ah * (1.0 - h) - bh * h)
        dn = p[7] * (an * (1.0 - n) - bn * n)
        return dV, dm, dh, dn

    @jit
    def rk4(y0, stim, dt, p):
        """Classical RK4 over ``len(stim)`` steps.

        ``stim[k]`` is the external current held constant over step k.
        Returns the (N+1, 4) state history and the index of the first
        non-finite state, or -1.
        """
        nsteps = stim.shape[0]
        out = np.empty((nsteps + 1, 4))
        V, m, h, n = y0[0], y0[1], y0[2], y0[3]
        out[0, 0] = V
        out[0, 1] = m
        out[0, 2] = h
        out[0, 3] = n
        half = 0.5 * dt
        for k in range(nsteps):
            s = stim[k]
            a1, b1, c1, d1 = rhs(V, m, h, n, s, p)
            a2, b2, c2, d2 = rhs(V + half * a1, m + half * b1, h + half * c1, n + half * d1, s, p)
            a3, b3, c3, d3 = rhs(V + half * a2, m + half * b2, h + half * c2, n + half * d2, s, p)
            a4, b4, c4, d4 = rhs(V + dt * a3, m + dt * b3, h + dt * c3, n + dt * d3, s, p)
            V = V + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            m = m + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            h = h + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            n = n + dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            out[k + 1, 0] = V
            out[k + 1, 1] = m
            out[k + 1, 2] = h
            out[k + 1, 3] = n
            if not (math.isfinite(V) and math.isfinite(m)
                    and math.isfinite(h) and math.isfinite(n)):
                return out, k + 1
        return out, -1

    @jit
    def sg(k, z, u_p, u_q, d_p, d_q):
        """Scharfetter-Gummel edge fluxes in Slotboom form.

        With n = exp(-z u) (1 + d) the exponentially fitted flux from P to Q
        is ``k * w * (d_p - d_q)``, ``w = exp(-z u_p) B(z (u_q - u_p))``.
        Writing it through the deviations d avoids the cancellation between
        drift and diffusion inside the Debye layer.  Returns the flux,
        ``k w`` (= d flux / d d_p = -d flux / d d_q), d flux / d u_p and
        d flux / d u_q.
        """
        ne = k.shape[0]
        f = np.empty(ne)
        kw = np.empty(ne)
        fup = np.empty(ne)
        fuq = np.empty(ne)
        for e in range(ne):
            x = z * (u_q[e] - u_p[e])
            ep = math.exp(-z * u_p[e])
            b = bern(x)
            db = dbern(x)
            dd = d_p[e] - d_q[e]
            kw[e] = k[e] * ep * b
            f[e] = kw[e] * dd
            fuq[e] = k[e] * z * ep * db * dd
            fup[e] = -k[e] * z * ep * (b + db) * dd
        return f, kw, fup, fuq

    return rates, rk4, sg


# ---------------------------------------------------------------------------
# vectorised numpy versions

def bernoulli_np(x):
    """B(x) = x / (exp(x) - 1), elementwise, with the removable point at 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _BERN_SMALL
    big = x > 700.0
    safe = np.where(small | big, 1.0, x)
    with np.errstate(over="ignore"):
        out = safe / np.expm1(safe)
    out = np.where(small, 1.0 - 0.5 * x + x * x / 12.0, out)
    return np.where(big, 0.0, out)


def dbernoulli_np(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _BERN_SMALL
    big = x > 700.0
    safe = np.where(small | big, 1.0, x)
    with np.errstate(over="ignore", invalid="ignore"):
        em = np.expm1(safe)
        out = (em - safe * (em + 1.0)) / (em * em)
    out = np.where(small, -0.5 + x / 6.0, out)
    return np.where(big, 0.0, out)


def _sg_edges_np(k, z, u_p, u_q, d_p, d_q):
    x = z * (u_q - u_p)
    ep = np.exp(-z * u_p)
    b = bernoulli_np(x)
    db = dbernoulli_np(x)
    dd = d_p - d_q
    kw = k * ep * b
    return kw * dd, kw, -k * z * ep * (b + db) * dd, k * z * ep * db * dd


# ---------------------------------------------------------------------------
# selection

rates_py, hh_rk4_py, sg_edges_loop_py = _build(lambda f: f)
sg_edges_np = _sg_edges_np
if _HAVE_NUMBA:
    _jit = numba.njit(cache=True)
    rates_jit, hh_rk4_jit, sg_edges_jit = _build(_jit)
else:  # pragma: no cover
    rates_jit, hh_rk4_jit, sg_edges_jit = rates_py, hh_rk4_py, sg_edges_np


def hh_rk4(y0, stim, dt, p):
    y0 = np.ascontiguousarray(y0, dtype=float)
    stim = np.ascontiguousarray(stim, dtype=float)
    p = tuple(float(x) for x in p)
    if USE_JIT:
        return hh_rk4_jit(y0, stim, float(dt), p)
    return hh_rk4_py(y0, stim, float(dt), p)


def sg_edges(k, z, u_p, u_q, d_p, d_q):
    if USE_JIT:
        return sg_edges_jit(k, float(z), u_p, u_q, d_p, d_q)
    return sg_edges_np(k, float(z), u_p, u_q, d_p, d_q)


def backend() -> str:
    return "numba" if USE_JIT else "numpy"
