"""Structured (r, xi) mesh with axisymmetric control volumes.

Control volumes are vertex centred: faces sit midway between nodes, and the
boundary nodes own half cells.  All areas and volumes are per radian (the
common factor 2*pi cancels from every balance).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .params import ConfigError, GeometryParams, SolverSettings

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AxisymmetricMesh:
    r: np.ndarray    # radial nodes (m), r[0] = membrane
    xi: np.ndarray   # axial nodes (m)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        if r.ndim != 1 or xi.ndim != 1 or r.size < 3 or xi.size < 2:
            raise ValueError("need at least 3 radial and 2 axial nodes")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(xi) <= 0):
            raise ValueError("node coordinates must be strictly ascending")
        if r[0] <= 0:
            raise ValueError("radial nodes must be positive")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "xi", xi)

    @property
    def shape(self) -> tuple[int, int]:
        """(n_xi, n_r); nodal arrays use this shape and flatten to j*n_r + i."""
        return self.xi.size, self.r.size

    @property
    def n_nodes(self) -> int:
        return self.r.size * self.xi.size

    @cached_property
    def r_faces(self) -> np.ndarray:
        r = self.r
        return np.concatenate(([r[0]], 0.5 * (r[1:] + r[:-1]), [r[-1]]))

    @cached_property
    def xi_faces(self) -> np.ndarray:
        x = self.xi
        return np.concatenate(([x[0]], 0.5 * (x[1:] + x[:-1]), [x[-1]]))

    @cached_property
    def ring_area(self) -> np.ndarray:
        """Axial face area of each radial control volume (m^2 per radian)."""
        f = self.r_faces
        return 0.5 * (f[1:] ** 2 - f[:-1] ** 2)

    @cached_property
    def dxi_cv(self) -> np.ndarray:
        return np.diff(self.xi_faces)

    @cached_property
    def volumes(self) -> np.ndarray:
        """Control volumes, shape (n_xi, n_r), m^3 per radian."""
        return self.dxi_cv[:, None] * self.ring_area[None, :]

    def radial_spacing(self) -> np.ndarray:
        return np.diff(self.r)

    def stats(self) -> dict:
        h = self.radial_spacing()
        ratio = h[1:] / h[:-1]
        return {
            "n_r": int(self.r.size),
            "n_xi": int(self.xi.size),
            "n_nodes": int(self.n_nodes),
            "r_min_m": float(self.r[0]),
            "r_max_m": float(self.r[-1]),
            "xi_min_m": float(self.xi[0]),
            "xi_max_m": float(self.xi[-1]),
            "dr_min_m": float(h.min()),
            "dr_max_m": float(h.max()),
            "growth_max": float(ratio.max()) if ratio.size else 1.0,
            "dxi_m": float(np.diff(self.xi).max()),
        }


def graded_radial_nodes(r0: float, r1: float, band: float, fine: float,
                        growth: float) -> np.ndarray:
    """Uniform spacing <= ``fine`` over ``band``, then geometric growth <= ``growth``.

    The coarse region uses the smallest cell count that reaches ``r1`` at the
    maximum growth factor, then lowers the factor so the last node lands on
    ``r1`` exactly.
    """
    if not (0 < band < r1 - r0):
        raise ConfigError("Debye band must be positive and narrower than the domain",
                          "geometry.debye_band_nm")
    nf = math.ceil(band / fine - 1e-9)
    h0 = band / nf
    fine_nodes = r0 + h0 * np.arange(nf + 1)
    fine_nodes[-1] = r0 + band
    rest = r1 - fine_nodes[-1]

    def length(q, n):
        return h0 * sum(q**k for k in range(1, n + 1))

    n = 1
    while length(growth, n) < rest:
        n += 1
    if n * h0 >= rest:
        h = np.full(n, rest / n)
    else:
        q = brentq(lambda q: length(q, n) - rest, 1.0 + 1e-14, growth, xtol=1e-15)
        h = h0 * q ** np.arange(1, n + 1)
    coarse = fine_nodes[-1] + np.cumsum(h)
    coarse[-1] = r1
    return np.concatenate((fine_nodes, coarse[:]))


def uniform_axial_nodes(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = max(1, math.ceil((hi - lo) / spacing - 1e-9))
    return np.linspace(lo, hi, n + 1)


def build_mesh(geom: GeometryParams, resolution: SolverSettings,
               xi_range: tuple[float, float] | None = None) -> AxisymmetricMesh:
    """Graded tensor mesh of the external domain.

    Parameters
    ----------
    geom : GeometryParams
    resolution : SolverSettings
        Supplies the fine spacing, growth cap, axial spacing and node budget.
    xi_range : (float, float), optional
        Axial extent; defaults to the configured window around the AP peak.

    Raises
    ------
    ConfigError
        If the geometry is degenerate or the mesh would exceed the node budget.
    """
    geom.validate()
    if xi_range is None:
        c, w = resolution.window_center, resolution.window
        xi_range = (c - 0.5 * w, c + 0.5 * w)
    lo, hi = xi_range
    if not hi > lo:
        raise ConfigError("empty axial range", "solver.window_um")
    r = graded_radial_nodes(geom.axon_radius, geom.outer_radius, geom.debye_band,
                            resolution.fine_spacing, resolution.growth_factor)
    n_xi = max(1, math.ceil((hi - lo) / resolution.axial_spacing - 1e-9)) + 1
    if r.size * n_xi > resolution.node_budget:
        raise ConfigError(f"mesh needs {r.size * n_xi} nodes, budget is "
                          f"{resolution.node_budget}", "solver.node_budget")
    xi = uniform_axial_nodes(lo, hi, resolution.axial_spacing)
    mesh = AxisymmetricMesh(r, xi)
    logger.info("mesh: %d x %d nodes, dr %.3g..%.3g m", r.size, xi.size,
                np.diff(r).min(), np.diff(r).max())
    return mesh
