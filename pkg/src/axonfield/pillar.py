"""Electric field transmitted into a diamond nanopillar and NV detectability.

The pillar is a cylinder of radius ``a = d/2`` and height ``H``.  Two contact
modes are supported:

* on-top: the tip face touches the membrane.  The closed form is the lowest
  Bessel mode, ``E_z = E_m J0(k r / a) exp(-k (z - R_mem) / a)``.
* on-side: a square patch of area ``pi a^2`` on the sidewall, at the tip,
  touches the membrane.  It is solved numerically.

The numerical solver is a cell-centred finite volume discretisation of
Laplace's equation on a cylindrical (r, theta, z) grid that conforms to the
pillar surface, solved with root-node aggregation AMG preconditioned CG.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.special import j0

from .errors import ConvergenceError
from .io import write_csv
from .params import ConfigError, PillarSettings, SensorSettings

logger = logging.getLogger(__name__)

J0_ZERO = 2.404825557695773
ON_TOP = "on-top"
ON_SIDE = "on-side"

FINE_DEPTH = 300e-9       # uniform axial spacing this far below the tip
AXIAL_GROWTH = 1.2        # axial stretching below the fine region
DEFAULT_NODE_BUDGET = 4_000_000
SOLVE_TOL = 1e-10
# weak strength threshold: the azimuthal couplings near the axis are much
# stronger than the radial ones and must not dominate the aggregation
AMG_STRENGTH = 0.05


@dataclass(frozen=True)
class PillarGeometry:
    """Cylindrical pillar; ``R_mem`` is the z coordinate of the contact plane."""

    diameter: float
    height: float = 1e-6
    contact: str = ON_TOP
    nv_depth: float = 5e-9
    eps_diamond: float = 6.0
    R_mem: float = 0.0

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError("diameter must be > 0")
        if not self.height > 0:
            raise ValueError("height must be > 0")
        if not self.nv_depth >= 0:
            raise ValueError("nv_depth must be >= 0")
        if self.contact not in (ON_TOP, ON_SIDE):
            raise ValueError(f"contact must be {ON_TOP!r} or {ON_SIDE!r}")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def contact_area(self) -> float:
        return math.pi * self.radius**2

    @property
    def patch_side(self) -> float:
        """Side of the square on-side patch with the tip-face area."""
        return math.sqrt(math.pi) * self.radius

    @property
    def decay_length(self) -> float:
        return self.radius / J0_ZERO

    @classmethod
    def from_settings(cls, ps: PillarSettings, R_mem: float = 0.0,
                      contact: str | None = None) -> "PillarGeometry":
        return cls(ps.diameter, ps.height, contact or ps.contact, ps.nv_depth,
                   ps.eps_diamond, R_mem)


# ---------------------------------------------------------------------------
# closed form, on-top contact

def _check_inside(r, z, geom: PillarGeometry):
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    a = geom.radius
    if np.any(r < 0) or np.any(r > a * (1 + 1e-12)):
        raise ValueError("r outside pillar: need 0 <= r <= d/2")
    if np.any(z < geom.R_mem):
        raise ValueError("z outside pillar: need z >= R_mem")
    return r, z


def potential_on_top(r, z, geom: PillarGeometry, E_m: float):
    """Potential (V) of the lowest mode, normalised so -dV/dz = E_m at the tip centre."""
    r, z = _check_inside(r, z, geom)
    a = geom.radius
    out = (a / J0_ZERO) * E_m * j0(J0_ZERO * r / a) * np.exp(-J0_ZERO * (z - geom.R_mem) / a)
    return out[()] if out.ndim == 0 else out


def field_on_top(r, z, geom: PillarGeometry, E_m: float):
    """Axial field E_z (V/m) of the lowest mode."""
    r, z = _check_inside(r, z, geom)
    a = geom.radius
    out = E_m * j0(J0_ZERO * r / a) * np.exp(-J0_ZERO * (z - geom.R_mem) / a)
    return out[()] if out.ndim == 0 else out


def fit_decay_constant(depth: np.ndarray, field: np.ndarray) -> float:
    """Log-linear regression slope of |field| against depth (1/m)."""
    depth = np.asarray(depth, dtype=float)
    field = np.abs(np.asarray(field, dtype=float))
    if depth.size < 2 or np.any(field <= 0):
        raise ValueError("need >= 2 samples of a non-vanishing field")
    slope = np.polyfit(depth, np.log(field), 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# numerical solve

@dataclass(frozen=True, eq=False)
class PillarGrid:
    """Potential on the cell centres of a cylindrical grid.

    ``z`` is measured from the pillar base; the tip is at ``z = height``.
    Arrays are indexed ``[i_r, j_theta, k_z]``.
    """

    geom: PillarGeometry
    mode: str
    E_m: float
    r: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    V: np.ndarray
    E_r: np.ndarray
    E_theta: np.ndarray
    E_z: np.ndarray
    iterations: int
    residual: float

    @property
    def n_cells(self) -> int:
        return self.V.size

    @property
    def cartesian_field(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = np.cos(self.theta)[None, :, None]
        s = np.sin(self.theta)[None, :, None]
        return self.E_r * c - self.E_theta * s, self.E_r * s + self.E_theta * c, self.E_z

    def _interpolators(self):
        th = np.append(self.theta, 2 * np.pi)
        Ex, Ey, Ez = self.cartesian_field
        out = []
        for f in (self.V, Ex, Ey, Ez):
            fp = np.concatenate([f, f[:, :1, :]], axis=1)
            out.append(RegularGridInterpolator((self.r, th, self.z), fp,
                                               bounds_error=False, fill_value=None))
        return out

    def sample(self, x, y, z) -> dict[str, np.ndarray]:
        """Trilinear interpolation in (r, theta, z) at Cartesian points.

        Points closer to the axis than the first cell centre are linearly
        interpolated along the diameter between the two opposite cells.
        """
        x, y, z = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float))
                                        for v in (x, y, z)))
        r = np.hypot(x, y)
        a, H = self.geom.radius, self.geom.height
        tol = 1e-12 * a
        if np.any(r > a + tol) or np.any(z < -tol) or np.any(z > H + tol):
            raise ValueError("point outside the pillar")
        th = np.mod(np.arctan2(y, x), 2 * np.pi)
        interps = self._interpolators()
        r0 = self.r[0]
        near = r < r0
        rq = np.where(near, r0, r)
        vals = [f(np.column_stack([rq, th, z])) for f in interps]
        if np.any(near):
            opp = np.column_stack([np.full(near.sum(), r0),
                                   np.mod(th[near] + np.pi, 2 * np.pi), z[near]])
            w = 0.5 * (1 + r[near] / r0)    # weight of the near side
            for n, f in enumerate(interps):
                vals[n][near] = w * vals[n][near] + (1 - w) * f(opp)
        V, Ex, Ey, Ez = vals
        return {"V": V, "Ex": Ex, "Ey": Ey, "Ez": Ez, "Emag": np.sqrt(Ex**2 + Ey**2 + Ez**2)}

    def evaluation_line(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Points at distance ``s`` from the contact along its inward normal."""
        return evaluation_points(self.geom, s, self.mode)


def evaluation_points(geom: PillarGeometry, s, mode: str):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    a, H = geom.radius, geom.height
    if mode == ON_TOP:
        return np.zeros_like(s), np.zeros_like(s), H - s
    return a - s, np.zeros_like(s), np.full_like(s, H - 0.5 * geom.patch_side)


def _axial_faces(H: float, h: float) -> np.ndarray:
    """Face heights from the base, uniform ``h`` below the tip then graded."""
    nf = max(1, int(round(min(FINE_DEPTH, H) / h)))
    widths = [min(FINE_DEPTH, H) / nf] * nf
    depth = sum(widths)
    while depth < H * (1 - 1e-12):
        nxt = widths[-1] * AXIAL_GROWTH
        rest = H - depth
        widths.append(rest if rest < 1.5 * nxt else nxt)
        depth += widths[-1]
    dz = np.array(widths[::-1])
    zf = np.concatenate(([0.0], np.cumsum(dz)))
    zf[-1] = H
    return zf


def _overlap(lo, hi, a, b):
    return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None) / (hi - lo)


def solve_pillar(geom: PillarGeometry, E_m: float, spacing: float, mode: str | None = None,
                 *, tol: float = SOLVE_TOL,
                 node_budget: int = DEFAULT_NODE_BUDGET) -> PillarGrid:
    """Solve Laplace's equation in the pillar.

    Parameters
    ----------
    geom : PillarGeometry
    E_m : float
        Normal field on the contact (V/m).
    spacing : float
        Radial and near-tip axial cell size (m); the azimuthal spacing at the
        rim matches it.
    mode : {"on-top", "on-side"}, optional
        Defaults to ``geom.contact``.  On-top uses a Neumann tip condition
        ``E_m J0(k r / a)``; on-side a uniform Neumann patch.  All other
        surfaces are grounded.

    Raises
    ------
    ConfigError
        If the grid exceeds ``node_budget``.
    ConvergenceError
        If the AMG-CG iteration misses ``tol``.
    """
    mode = mode or geom.contact
    if mode not in (ON_TOP, ON_SIDE):
        raise ValueError(f"unknown contact mode {mode!r}")
    if not spacing > 0:
        raise ConfigError("must be > 0", "pillar.grid_spacing_nm")
    a, H = geom.radius, geom.height
    nr = max(2, int(round(a / spacing)))
    dr = a / nr
    nth = max(8, 4 * math.ceil(2 * math.pi * a / dr / 4))
    dth = 2 * math.pi / nth
    zf = _axial_faces(H, dr)
    nz = zf.size - 1
    n = nr * nth * nz
    if n > node_budget:
        raise ConfigError(f"pillar grid needs {n} cells, budget is {node_budget}",
                          "pillar.grid_spacing_nm")

    rf = dr * np.arange(nr + 1)
    rc = 0.5 * (rf[1:] + rf[:-1])
    thc = dth * np.arange(nth)                  # cell centres at 0, pi/2, pi, ...
    thf = np.mod(thc + math.pi, 2 * math.pi) - math.pi - 0.5 * dth   # wrapped to [-pi, pi)
    dz = np.diff(zf)
    zc = 0.5 * (zf[1:] + zf[:-1])

    I, J, K = np.meshgrid(np.arange(nr), np.arange(nth), np.arange(nz), indexing="ij")
    idx = (I * nth + J) * nz + K
    diag = np.zeros(I.shape)
    b = np.zeros(I.shape)
    rows, cols, vals = [], [], []

    def couple(mask, nb, g):
        rows.append(idx[mask])
        cols.append(nb)
        vals.append(g)
        diag[mask] += g

    g_r = rf[I + 1] * dth * dz[K] / dr          # outer radial face of each cell
    m = I < nr - 1
    couple(m, idx[m] + nth * nz, g_r[m])
    m = I > 0
    couple(m, idx[m] - nth * nz, (rf[I] * dth * dz[K] / dr)[m])
    g_t = dr * dz[K] / (rc[I] * dth)
    everywhere = np.ones(I.shape, bool)
    couple(everywhere, ((I * nth + (J + 1) % nth) * nz + K).ravel(), g_t.ravel())
    couple(everywhere, ((I * nth + (J - 1) % nth) * nz + K).ravel(), g_t.ravel())
    area_z = rc[I] * dr * dth
    dzc = np.diff(zc)
    m = K < nz - 1
    couple(m, idx[m] + 1, (area_z / dzc[np.minimum(K, nz - 2)])[m])
    m = K > 0
    couple(m, idx[m] - 1, (area_z / dzc[np.maximum(K - 1, 0)])[m])

    # grounded base
    base = K == 0
    diag[base] += (area_z / (0.5 * dz[0]))[base]
    tip = K == nz - 1
    rim = I == nr - 1
    g_rim = rf[-1] * dth * dz[K] / (0.5 * dr)
    if mode == ON_TOP:
        diag[rim] += g_rim[rim]
        b[tip] += (E_m * j0(J0_ZERO * rc[I] / a) * area_z)[tip]
    else:
        diag[tip] += (area_z / (0.5 * dz[-1]))[tip]
        half = 0.5 * geom.patch_side / a
        frac = (_overlap(thf, thf + dth, -half, half)[J]
                * _overlap(zf[:-1], zf[1:], H - geom.patch_side, H)[K])
        diag[rim] += ((1 - frac) * g_rim)[rim]
        b[rim] += (frac * E_m * rf[-1] * dth * dz[K])[rim]

    A = sp.csr_matrix((np.concatenate([diag.ravel(), -np.concatenate(vals)]),
                       (np.concatenate([np.arange(n), np.concatenate(rows)]),
                        np.concatenate([np.arange(n), np.concatenate(cols)]))), shape=(n, n))
    rhs = b.ravel()
    logger.info("pillar %s: %d x %d x %d cells", mode, nr, nth, nz)
    if not np.any(rhs):
        x, its, rel = np.zeros(n), 0, 0.0
    else:
        # pyamg draws its spectral-radius start vector from the global RNG
        state = np.random.get_state()
        np.random.seed(0)
        try:
            ml = pyamg.rootnode_solver(A, symmetry="symmetric",
                                       strength=("symmetric", {"theta": AMG_STRENGTH}))
            hist: list[float] = []
            x = ml.solve(rhs, tol=tol, accel="cg", maxiter=500, residuals=hist)
        finally:
            np.random.set_state(state)
        its = len(hist) - 1
        rel = float(np.linalg.norm(rhs - A @ x) / np.linalg.norm(rhs))
        if not rel <= 10 * tol:
            raise ConvergenceError(f"pillar solve stalled at relative residual {rel:.3e}",
                                   {"residual_history": hist}, None)
    V = x.reshape(nr, nth, nz)

    E_r = -np.gradient(V, rc, axis=0, edge_order=2)
    E_t = -(np.roll(V, -1, axis=1) - np.roll(V, 1, axis=1)) / (2 * dth) / rc[:, None, None]
    E_z = -np.gradient(V, zc, axis=2, edge_order=2)
    return PillarGrid(geom, mode, float(E_m), rc, thc, zc, V, E_r, E_t, E_z, its, rel)


# ---------------------------------------------------------------------------
# evaluation at the NV centre and detectability

def field_at_nv(geom: PillarGeometry, E_m: float | None = None,
                source: PillarGrid | None = None) -> float:
    """Field magnitude at the NV point, ``nv_depth`` along the evaluation line.

    Without ``source`` the on-top closed form is evaluated exactly.
    """
    if source is None:
        if geom.contact != ON_TOP:
            raise ValueError("on-side contact needs a numerical grid")
        if E_m is None:
            raise ValueError("E_m required for the closed form")
        return float(abs(field_on_top(0.0, geom.R_mem + geom.nv_depth, geom, E_m)))
    x, y, z = source.evaluation_line(np.array([geom.nv_depth]))
    return float(source.sample(x, y, z)["Emag"][0])


@dataclass(frozen=True)
class SensorSpec:
    e_threshold: float
    b_threshold: float
    integration_time: float = 1e-3
    collection_gain: float = 1.0
    sensitivity_exponent: float = 0.5

    def __post_init__(self):
        if not (self.e_threshold > 0 and self.b_threshold > 0):
            raise ValueError("thresholds must be > 0")
        if not self.collection_gain >= 1:
            raise ValueError("collection_gain must be >= 1")

    @classmethod
    def from_settings(cls, s: SensorSettings) -> "SensorSpec":
        return cls(s.e_threshold, s.b_threshold, s.integration_time, s.collection_gain,
                   s.sensitivity_exponent)


@dataclass(frozen=True)
class DetectabilityReport:
    quantity: str
    field_at_nv: float
    effective_threshold: float
    detectable: bool
    margin: float

    def as_dict(self) -> dict:
        return {"quantity": self.quantity, "field_at_nv": self.field_at_nv,
                "effective_threshold": self.effective_threshold,
                "detectable": self.detectable, "margin": self.margin}


def assess_detectability(field_value: float, spec: SensorSpec,
                         quantity: str) -> DetectabilityReport:
    """Compare ``|field_value|`` (SI) with the gain-adjusted threshold."""
    if quantity == "electric":
        base = spec.e_threshold
    elif quantity == "magnetic":
        base = spec.b_threshold
    else:
        raise ValueError("quantity must be 'electric' or 'magnetic'")
    eff = base / spec.collection_gain ** spec.sensitivity_exponent
    f = abs(float(field_value))
    margin = f / eff
    return DetectabilityReport(quantity, f, eff, bool(f >= eff), margin)


# ---------------------------------------------------------------------------
# export

def line_profile(geom: PillarGeometry, E_m: float, s: np.ndarray,
                 source: PillarGrid | None = None) -> np.ndarray:
    """|E| along the evaluation line at distances ``s`` from the contact."""
    s = np.asarray(s, dtype=float)
    if source is None:
        if geom.contact != ON_TOP:
            raise ValueError("on-side contact needs a numerical grid")
        return np.abs(field_on_top(0.0, geom.R_mem + s, geom, E_m))
    return source.sample(*source.evaluation_line(s))["Emag"]


def write_line_csv(path: str | Path, s: np.ndarray, E: np.ndarray) -> Path:
    return write_csv(path, ["s_m", "E_Vpm"], [np.asarray(s), np.asarray(E)])


def write_grid_csv(path: str | Path, grid: PillarGrid) -> Path:
    R, T, Z = np.meshgrid(grid.r, grid.theta, grid.z, indexing="ij")
    Ex, Ey, Ez = grid.cartesian_field
    Emag = np.sqrt(Ex**2 + Ey**2 + Ez**2)
    return write_csv(path, ["x_m", "y_m", "z_m", "V_V", "Emag_Vpm"],
                     [(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel(), Z.ravel(),
                      grid.V.ravel(), Emag.ravel()])
