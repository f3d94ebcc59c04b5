"""Azimuthal magnetic field outside the axon from Ampere's law."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .hh import MembraneWave
from .io import write_csv
from .mesh import AxisymmetricMesh

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 8


@dataclass(frozen=True, eq=False)
class MagneticField:
    r: np.ndarray
    xi: np.ndarray
    B_phi: np.ndarray           # (n_xi, n_r) T
    membrane_term: np.ndarray   # R B_m / r
    current_term: np.ndarray    # mu0/r * int_R^r r' J_xi dr'


@dataclass(frozen=True)
class InverseRFit:
    coefficient: float          # T m
    rms_residual: float         # relative
    fit_range: tuple[float, float]
    n_samples: int


def _check_wave(mesh: AxisymmetricMesh, wave: MembraneWave) -> np.ndarray:
    if wave.B_m is None:
        raise ValueError("wave lacks the membrane magnetic profile")
    if wave.xi.shape != mesh.xi.shape or not np.allclose(wave.xi, mesh.xi, rtol=0, atol=1e-15):
        raise ValueError("mesh mismatch: wave is not sampled on the mesh's xi nodes")
    return wave.B_m


def magnetic_field(mesh: AxisymmetricMesh, J_xi: np.ndarray, wave: MembraneWave,
                   mu0: float) -> MagneticField:
    """B_phi(r, xi) = (R B_m(xi) + mu0 int_R^r r' J_xi dr') / r.

    ``wave`` must already be sampled on ``mesh.xi`` (the field solution
    carries such a copy).
    """
    B_m = _check_wave(mesh, wave)
    J_xi = np.asarray(J_xi, dtype=float)
    if J_xi.shape != mesh.shape:
        raise ValueError(f"mesh mismatch: J_xi has shape {J_xi.shape}, mesh {mesh.shape}")
    r = mesh.r
    R = r[0]
    enclosed = cumulative_trapezoid(r[None, :] * J_xi, r, axis=1, initial=0.0)
    mem = R * B_m[:, None] / r[None, :]
    cur = mu0 * enclosed / r[None, :]
    return MagneticField(r.copy(), mesh.xi.copy(), mem + cur, mem, cur)


def fit_inverse_r(r: np.ndarray, B: np.ndarray,
                  fit_range: tuple[float, float] | None = None) -> InverseRFit:
    """Least-squares fit of B = c / r.

    The residual is reported relative to the RMS of the data.
    """
    r = np.asarray(r, dtype=float)
    B = np.asarray(B, dtype=float)
    if fit_range is None:
        fit_range = (float(r.min()), float(r.max()))
    lo, hi = fit_range
    sel = (r >= lo) & (r <= hi)
    if sel.sum() == 0:
        raise ValueError("empty fit range")
    if sel.sum() < MIN_FIT_SAMPLES:
        raise ValueError(f"need >= {MIN_FIT_SAMPLES} samples in range, got {int(sel.sum())}")
    if np.any(r[sel] <= 0):
        raise ValueError("radii must be positive")
    x, y = 1.0 / r[sel], B[sel]
    c = float(np.dot(x, y) / np.dot(x, x))
    scale = np.sqrt(np.mean(y**2))
    resid = np.sqrt(np.mean((y - c * x) ** 2))
    rel = float(resid / scale) if scale > 0 else 0.0
    return InverseRFit(c, rel, (float(lo), float(hi)), int(sel.sum()))


def enclosed_current_loop(r: np.ndarray, J_xi: np.ndarray) -> np.ndarray:
    """Trapezoid sum of r J dr, written as an explicit annulus-by-annulus loop.

    Kept separate from :func:`magnetic_field` as an independent check.
    """
    nz, nr = J_xi.shape
    out = np.zeros((nz, nr))
    for j in range(nz):
        acc = 0.0
        for i in range(1, nr):
            acc += 0.5 * (r[i - 1] * J_xi[j, i - 1] + r[i] * J_xi[j, i]) * (r[i] - r[i - 1])
            out[j, i] = acc
    return out


def write_bphi_csv(field: MagneticField, path: str | Path) -> Path:
    XI, R = np.meshgrid(field.xi, field.r, indexing="ij")
    return write_csv(path, ["r_m", "xi_m", "Bphi_T"], [R.ravel(), XI.ravel(), field.B_phi.ravel()])
