"""Hodgkin-Huxley membrane dynamics and the membrane boundary profiles.

Rate functions take the membrane potential in mV and return 1/ms, as in
the usual fitted forms.  Everything else is SI.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import NumericalError
from .io import write_csv
from .params import GeometryParams, HHParams, MembraneBCParams, ModelConfig

logger = logging.getLogger(__name__)

AP_DETECT_MV = -20.0


@dataclass(frozen=True)
class GatingState:
    m: np.ndarray | float
    h: np.ndarray | float
    n: np.ndarray | float


@dataclass(frozen=True)
class HHTimeSeries:
    t: np.ndarray       # s
    V: np.ndarray       # V
    gating: GatingState
    I_r: np.ndarray     # A/m^2, total radial ionic current incl. resting balance
    I_Na: np.ndarray
    I_K: np.ndarray
    I_bal: float = 0.0

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


@dataclass(frozen=True)
class MembraneWave:
    """Profiles on the traveling-frame coordinate xi = z - v t (ascending)."""

    velocity: float
    xi: np.ndarray
    V: np.ndarray
    gating: GatingState
    I_r: np.ndarray
    dIr_dxi: np.ndarray
    E_m: np.ndarray | None = None        # radial field at the membrane, V/m
    B_m: np.ndarray | None = None        # azimuthal field at the membrane, T
    flux_pos: np.ndarray | None = None   # mol/(m^2 s), +r outward
    flux_neg: np.ndarray | None = None
    V_rest: float = float("nan")

    @property
    def dV_dr(self) -> np.ndarray:
        """Potential gradient imposed at r = R (the Neumann data)."""
        return -self.E_m

    def resample(self, xi: np.ndarray) -> "MembraneWave":
        """Linear interpolation of every profile onto new xi samples."""
        xi = np.asarray(xi, dtype=float)
        if xi.min() < self.xi[0] - 1e-15 or xi.max() > self.xi[-1] + 1e-15:
            raise ValueError("requested xi outside the wave's extent")

        def f(a):
            return None if a is None else np.interp(xi, self.xi, a)

        g = GatingState(f(self.gating.m), f(self.gating.h), f(self.gating.n))
        return MembraneWave(self.velocity, xi, f(self.V), g, f(self.I_r), f(self.dIr_dxi),
                            f(self.E_m), f(self.B_m), f(self.flux_pos), f(self.flux_neg),
                            self.V_rest)


# ---------------------------------------------------------------------------
# channel kinetics

def rate_constants(V_mV):
    """The six rate constants (1/ms) at potential ``V_mV`` (mV).

    Returns ``(alpha_m, beta_m, alpha_h, beta_h, alpha_n, beta_n)``.  The
    removable singularities of alpha_m and alpha_n are handled by writing
    them through the Bernoulli function x / (exp(x) - 1).
    """
    v = np.asarray(V_mV, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("membrane potential must be finite")
    with np.errstate(over="ignore"):
        am = _kernels.bernoulli_np(-(v + 30.0) / 10.0)
        bm = 4.0 * np.exp(-(v + 55.0) / 18.0)
        ah = 0.07 * np.exp(-(v + 44.0) / 20.0)
        bh = 1.0 / (1.0 + np.exp(-(v + 14.0) / 10.0))
        an = 0.1 * _kernels.bernoulli_np(-(v + 34.0) / 10.0)
        bn = 0.125 * np.exp(-(v + 44.0) / 80.0)
    out = (am, bm, ah, bh, an, bn)
    if v.ndim == 0:
        return tuple(float(x) for x in out)
    return out


def steady_gating(V_mV) -> GatingState:
    """x_inf = alpha_x / (alpha_x + beta_x) for x in (m, h, n)."""
    am, bm, ah, bh, an, bn = rate_constants(V_mV)
    return GatingState(am / (am + bm), ah / (ah + bh), an / (an + bn))


def ionic_current(V, g: GatingState, p: HHParams):
    """Sodium, potassium and total ionic current densities (A/m^2), V in volts."""
    V = np.asarray(V, dtype=float)
    I_Na = (p.g_Na * g.m**3 * g.h + p.g_NaL) * (V - p.V_Na)
    I_K = (p.g_K * g.n**4 + p.g_KL) * (V - p.V_K)
    if np.ndim(I_Na) == 0:
        return float(I_Na), float(I_K), float(I_Na + I_K)
    return I_Na, I_K, I_Na + I_K


def resting_balance_current(p: HHParams) -> float:
    """Constant current that makes (V_rest, steady gating) a fixed point."""
    _, _, I = ionic_current(p.V_rest, steady_gating(p.V_rest * 1e3), p)
    return -I


# ---------------------------------------------------------------------------
# integration

def _stimulus_per_step(p: HHParams, nsteps: int, dt: float) -> np.ndarray:
    # sampled at step midpoints: piecewise-constant forcing stays aligned
    # with step boundaries, which keeps RK4 at full order
    tm = (np.arange(nsteps) + 0.5) * dt
    s = p.stimulus
    on = (tm >= s.onset) & (tm < s.onset + s.duration)
    return np.where(on, -s.amplitude, 0.0)


def integrate_hh(p: HHParams, t_end: float | None = None, dt: float | None = None,
                 *, check_preconditions: bool = True) -> HHTimeSeries:
    """Fixed-step RK4 integration from rest.

    Parameters
    ----------
    p : HHParams
    t_end, dt : float, optional
        Duration and step (s); default to the values stored in ``p``.
    check_preconditions : bool
        Enforce dt <= 1 us and at least 20 ms after the stimulus.

    Raises
    ------
    NumericalError
        If the state stops being finite; the message carries the time.
    """
    t_end = p.t_end if t_end is None else float(t_end)
    dt = p.dt if dt is None else float(dt)
    if not dt > 0 or not t_end > dt:
        raise ValueError("need 0 < dt < t_end")
    if check_preconditions:
        if dt > 1e-6 * (1 + 1e-12):
            raise ValueError(f"dt = {dt:g} s exceeds 1 us")
        if p.stimulus.amplitude != 0:
            t_stim_end = p.stimulus.onset + p.stimulus.duration
            if t_end < t_stim_end + 20e-3 - 1e-12:
                raise ValueError("t_end must cover the stimulus plus 20 ms")
    nsteps = int(round(t_end / dt))
    I_bal = resting_balance_current(p) if p.balance_rest else 0.0
    g0 = steady_gating(p.V_rest * 1e3)
    y0 = np.array([p.V_rest, g0.m, g0.h, g0.n])
    params = (p.g_Na, p.g_NaL, p.g_K, p.g_KL, p.V_Na, p.V_K, p.C_m, p.phi * 1e3, I_bal)
    stim = _stimulus_per_step(p, nsteps, dt)
    logger.debug("HH: %d RK4 steps of %.3g s (%s)", nsteps, dt, _kernels.backend())
    out, fail = _kernels.hh_rk4(y0, stim, dt, params)
    if fail >= 0:
        raise NumericalError(f"non-finite HH state at t = {fail * dt:.6g} s")
    t = np.arange(nsteps + 1) * dt
    V = out[:, 0]
    g = GatingState(out[:, 1], out[:, 2], out[:, 3])
    I_Na, I_K, I_ion = ionic_current(V, g, p)
    return HHTimeSeries(t, V, g, I_ion + I_bal, I_Na, I_K, I_bal)


def to_traveling_wave(series: HHTimeSeries, v: float, spacing: float = 1e-6,
                      V_rest: float | None = None) -> MembraneWave:
    """Map a time series onto xi = -v (t - t_peak) on a uniform grid.

    The grid contains xi = 0 (the voltage maximum) and spans the whole
    series; profiles are linearly interpolated.
    """
    if not v > 0:
        raise ValueError("velocity must be positive")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    V = series.V
    if V.max() * 1e3 <= AP_DETECT_MV:
        raise ValueError(f"no action potential: max V = {V.max() * 1e3:.2f} mV")
    k = int(np.argmax(V))     # first occurrence on ties
    t_peak = series.t[k]
    # ascending xi means descending time
    xi_src = -v * (series.t[::-1] - t_peak)
    j0 = math.ceil(xi_src[0] / spacing - 1e-9)
    j1 = math.floor(xi_src[-1] / spacing + 1e-9)
    xi = np.arange(j0, j1 + 1) * spacing
    xi[xi == 0] = 0.0

    def f(a):
        return np.interp(xi, xi_src, a[::-1])

    g = GatingState(f(series.gating.m), f(series.gating.h), f(series.gating.n))
    I_r = f(series.I_r)
    Vx = f(V)
    # interpolation at the exact peak sample reproduces it
    Vx[xi == 0] = V[k]
    return MembraneWave(v, xi, Vx, g, I_r, np.gradient(I_r, spacing),
                        V_rest=float(V[0]) if V_rest is None else V_rest)


# ---------------------------------------------------------------------------
# membrane boundary profiles

def membrane_field_terms(wave: MembraneWave, bc: MembraneBCParams, p: HHParams,
                         geom: GeometryParams, eps: float) -> dict[str, np.ndarray]:
    """The separate contributions to dV/dr at r = R (V/m).

    Keys: ``rest`` (stored charge), ``ohmic`` (internal current),
    ``capacitive`` (membrane charging) and ``gradient`` (the gamma term).
    Their sum is the Neumann datum dV/dr.
    """
    R = geom.axon_radius
    v = wave.velocity
    ones = np.ones_like(wave.V)
    rest = -bc.q_i0 / (2 * np.pi * R * eps) * ones
    ohmic = bc.eta * np.pi * R**2 * bc.sigma_i0 * wave.I_r / (v**2 * p.C_m) / (2 * np.pi * R * eps)
    capacitive = 2 * np.pi * R * p.C_m * (p.V_rest - wave.V) / (2 * np.pi * R * eps)
    gradient = -(bc.gamma * R / (v * 2 * p.C_m)) * wave.dIr_dxi
    return {"rest": rest, "ohmic": ohmic, "capacitive": capacitive, "gradient": gradient}


def membrane_E_profile(wave: MembraneWave, bc: MembraneBCParams, p: HHParams,
                       geom: GeometryParams, eps: float) -> np.ndarray:
    """Radial electric field at the membrane, E_r = -dV/dr (V/m)."""
    terms = membrane_field_terms(wave, bc, p, geom, eps)
    return -(terms["rest"] + terms["ohmic"] + terms["capacitive"] + terms["gradient"])


def membrane_B_profile(wave: MembraneWave, bc: MembraneBCParams, p: HHParams,
                       geom: GeometryParams, mu0: float) -> np.ndarray:
    """Azimuthal magnetic field at the membrane (T)."""
    R = geom.axon_radius
    return -0.5 * mu0 * bc.eta * R * bc.sigma_i0 / p.C_m / wave.velocity * wave.I_r


def membrane_flux_profile(wave: MembraneWave, faraday: float) -> tuple[np.ndarray, np.ndarray]:
    """Positive-ion molar flux I_r / F (mol/m^2/s, +r outward) and a zero
    negative-ion flux."""
    return wave.I_r / faraday, np.zeros_like(wave.I_r)


def with_boundary_profiles(wave: MembraneWave, config: ModelConfig) -> MembraneWave:
    c = config.constants
    fp, fn = membrane_flux_profile(wave, c.F)
    return replace(
        wave,
        E_m=membrane_E_profile(wave, config.bc, config.hh, config.geometry,
                               config.electrolyte.permittivity),
        B_m=membrane_B_profile(wave, config.bc, config.hh, config.geometry, c.mu0),
        flux_pos=fp, flux_neg=fn, V_rest=config.hh.V_rest,
    )


def resting_wave(config: ModelConfig, xi: np.ndarray) -> MembraneWave:
    """A wave with I_r = 0 and V = V_rest everywhere (the equilibrium input)."""
    xi = np.asarray(xi, dtype=float)
    hh = config.hh
    g0 = steady_gating(hh.V_rest * 1e3)
    ones = np.ones_like(xi)
    w = MembraneWave(hh.velocity, xi, hh.V_rest * ones,
                     GatingState(g0.m * ones, g0.h * ones, g0.n * ones),
                     0.0 * ones, 0.0 * ones, V_rest=hh.V_rest)
    return with_boundary_profiles(w, config)


def build_membrane_wave(config: ModelConfig, series: HHTimeSeries | None = None) -> MembraneWave:
    """Integrate (unless given a series) and return the full boundary wave."""
    hh = config.hh
    if series is None:
        series = integrate_hh(hh)
    wave = to_traveling_wave(series, hh.velocity, hh.wave_spacing, V_rest=hh.V_rest)
    return with_boundary_profiles(wave, config)


# ---------------------------------------------------------------------------
# export

def write_timeseries_csv(series: HHTimeSeries, path: str | Path) -> Path:
    g = series.gating
    return write_csv(path, ["t_s", "V_V", "m", "h", "n", "INa_Apm2", "IK_Apm2"],
                     [series.t, series.V, g.m, g.h, g.n, series.I_Na, series.I_K])


def write_wave_csv(wave: MembraneWave, path: str | Path) -> Path:
    return write_csv(path, ["xi_m", "V_V", "Ir_Apm2", "Em_Vpm", "Bm_T", "fluxpos_molpm2s"],
                     [wave.xi, wave.V, wave.I_r, wave.E_m, wave.B_m, wave.flux_pos])
