"""Steady traveling-frame Poisson-Nernst-Planck solver on the external domain.

Discretisation
--------------
Vertex-centred finite volumes on the tensor mesh.  The unknowns are
``u = V / V_t`` and the Slotboom deviations ``d`` defined by
``c / c_b = exp(-z u) (1 + d)``; the equilibrium Boltzmann profile has
``d = 0``.  Drift-diffusion fluxes use the Scharfetter-Gummel exponential
fit written in ``d``, which keeps concentrations positive however steep the
Debye-layer potential is and avoids cancellation between drift and
diffusion.  The frame advection ``-v dc/dxi``
is a separate central-difference face term; upwinding it at these cell
Peclet numbers (~10^3) would add numerical diffusion that dwarfs the real
axial current.

Boundary data: Neumann potential gradient and ion flux at the membrane,
Dirichlet bulk values on the outer row, zero physical flux and zero
potential gradient at both axial ends (where the frame advection still
carries material in and out).

Nonlinear solve
---------------
Gummel sweeps (quasi-Fermi nonlinear Poisson, then one linear solve per
species) accelerated by Anderson mixing.  If the coupled residual stalls
the solver switches to damped Newton on the fully coupled system.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import ConvergenceError, NumericalError
from .hh import MembraneWave
from .io import write_csv
from .mesh import AxisymmetricMesh
from .params import ElectrolyteModel, PhysicalConstants, SolverSettings

logger = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 200_000
ITERATIVE_RTOL = 1e-10
# residual blocks below this multiple of their roundoff scale count as converged
ROUNDOFF_FACTOR = 256.0


@dataclass
class BoundaryData:
    """Everything the discrete problem needs besides the mesh, in SI units."""

    dVdr_membrane: np.ndarray      # (n_xi,) V/m
    flux_pos: np.ndarray           # (n_xi,) mol/m^2/s into the domain
    flux_neg: np.ndarray
    outer_V: np.ndarray            # (n_xi,) Dirichlet values on r = r_max
    outer_c_pos: np.ndarray
    outer_c_neg: np.ndarray
    charge_source: np.ndarray | None = None   # (n_xi, n_r) C/m^3
    pos_source: np.ndarray | None = None      # (n_xi, n_r) mol/m^3/s
    neg_source: np.ndarray | None = None


@dataclass(frozen=True)
class Carrier:
    valence: int
    diffusion: float
    conc_bulk: float


@dataclass(eq=False)
class FieldSolution:
    mesh: AxisymmetricMesh
    V: np.ndarray         # (n_xi, n_r) V
    c_pos: np.ndarray     # mol/m^3
    c_neg: np.ndarray
    residual_norm: float
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    method: str = "gummel"
    face_flux: dict = field(default_factory=dict, repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)
    faraday: float = 96485.33212331001
    membrane_flux: tuple | None = field(default=None, repr=False)
    wave: MembraneWave | None = field(default=None, repr=False)


@dataclass(eq=False)
class DerivedFields:
    rho: np.ndarray
    E_r: np.ndarray
    E_xi: np.ndarray
    J_r: np.ndarray
    J_xi: np.ndarray


class PNPSystem:
    """Discrete residual and Jacobian of the scaled PNP equations."""

    def __init__(self, mesh: AxisymmetricMesh, pos: Carrier, neg: Carrier, *,
                 eps: float, faraday: float, thermal_voltage: float,
                 velocity: float, bd: BoundaryData):
        if pos.valence <= 0 or neg.valence >= 0:
            raise ValueError("need one positive and one negative carrier")
        if not np.isclose(pos.conc_bulk, neg.conc_bulk, rtol=1e-12):
            raise ValueError("lumped carriers must share the bulk concentration")
        self.mesh = mesh
        self.pos, self.neg = pos, neg
        self.eps, self.F, self.Vt, self.v = eps, faraday, thermal_voltage, velocity
        self.cb = pos.conc_bulk
        self.kappa = faraday * self.cb / (eps * thermal_voltage)
        self.bd = bd
        nz, nr = mesh.shape
        self.nz, self.nr, self.N = nz, nr, nz * nr
        for name in ("dVdr_membrane", "flux_pos", "flux_neg", "outer_V",
                     "outer_c_pos", "outer_c_neg"):
            a = np.asarray(getattr(bd, name), dtype=float)
            if a.shape != (nz,):
                raise ValueError(f"boundary array {name} has shape {a.shape}, expected ({nz},)")
            setattr(bd, name, a)
        self._build_geometry()

    # -- geometry -------------------------------------------------------------
    def _build_geometry(self):
        m = self.mesh
        nz, nr = self.nz, self.nr
        idx = np.arange(self.N).reshape(nz, nr)
        # radial edges
        Pr = idx[:, :-1].ravel()
        Ar = (0.5 * (m.r[1:] + m.r[:-1]))[None, :] * m.dxi_cv[:, None]
        hr = np.broadcast_to(np.diff(m.r)[None, :], (nz, nr - 1))
        # axial edges
        Pz = idx[:-1, :].ravel()
        Az = np.broadcast_to(m.ring_area[None, :], (nz - 1, nr))
        hz = np.broadcast_to(np.diff(m.xi)[:, None], (nz - 1, nr))
        self.eP = np.concatenate((Pr, Pz))
        self.eQ = np.concatenate((Pr + 1, Pz + nr))
        self.eA = np.concatenate((Ar.ravel(), Az.ravel()))
        self.eh = np.concatenate((hr.ravel(), hz.ravel()))
        self.e_axial = np.concatenate((np.zeros(Pr.size, bool), np.ones(Pz.size, bool)))
        self.n_radial_edges = Pr.size
        self.vol = m.volumes.ravel()
        self.dirichlet = idx[:, -1].copy()
        self.membrane = idx[:, 0].copy()
        self.end_hi = idx[-1, :-1].copy()
        self.end_lo = idx[0, :-1].copy()
        self.end_area = m.ring_area[:-1].copy()
        self.free = np.ones(self.N, bool)
        self.free[self.dirichlet] = False
        self._mask = sp.diags(self.free.astype(float))
        self._ident_D = sp.diags((~self.free).astype(float))
        # constant Laplacian for Poisson
        w = self.eA / self.eh
        rows = np.concatenate((self.eP, self.eP, self.eQ, self.eQ))
        cols = np.concatenate((self.eP, self.eQ, self.eP, self.eQ))
        vals = np.concatenate((-w, w, w, -w))
        self.lap = sp.csr_matrix((vals, (rows, cols)), shape=(self.N, self.N))
        self.k_pos = self.pos.diffusion * self.eA / self.eh
        self.k_neg = self.neg.diffusion * self.eA / self.eh
        self.adv = np.where(self.e_axial, self.v * self.eA, 0.0)
        # boundary sources in scaled units
        bd = self.bd
        Rm = m.r[0]
        self.S_V = np.zeros(self.N)
        self.S_V[self.membrane] = -bd.dVdr_membrane / self.Vt * Rm * m.dxi_cv
        if bd.charge_source is not None:
            self.S_V += np.asarray(bd.charge_source).ravel() / (self.eps * self.Vt) * self.vol
        self.S_pos = np.zeros(self.N)
        self.S_neg = np.zeros(self.N)
        self.S_pos[self.membrane] = bd.flux_pos / self.cb * Rm * m.dxi_cv
        self.S_neg[self.membrane] = bd.flux_neg / self.cb * Rm * m.dxi_cv
        if bd.pos_source is not None:
            self.S_pos += np.asarray(bd.pos_source).ravel() / self.cb * self.vol
        if bd.neg_source is not None:
            self.S_neg += np.asarray(bd.neg_source).ravel() / self.cb * self.vol
        self.uD = bd.outer_V / self.Vt
        self.pD = bd.outer_c_pos / self.cb
        self.nD = bd.outer_c_neg / self.cb

    # -- state ----------------------------------------------------------------
    # x = [u, d+, d-]; n = exp(-z u) (1 + d) with d the Slotboom deviation

    def carrier(self, which: str) -> Carrier:
        return self.pos if which == "pos" else self.neg

    def concentrations(self, x):
        u, dp, dn = self.split(x)
        return (np.exp(-self.pos.valence * u) * (1.0 + dp),
                np.exp(-self.neg.valence * u) * (1.0 + dn))

    def state_from_concentrations(self, u, npos, nneg):
        dp = npos * np.exp(self.pos.valence * u) - 1.0
        dn = nneg * np.exp(self.neg.valence * u) - 1.0
        return np.concatenate((u, dp, dn))

    def dirichlet_deviation(self, which: str):
        z = self.carrier(which).valence
        nD = self.pD if which == "pos" else self.nD
        return nD * np.exp(z * self.uD) - 1.0

    # -- residuals ------------------------------------------------------------
    def poisson_residual(self, u, npos, nneg):
        R = self.lap @ u + self.kappa * self.vol * (npos - nneg) + self.S_V
        R[self.dirichlet] = u[self.dirichlet] - self.uD
        return R

    def poisson_scale(self, u, npos, nneg):
        """Magnitude of the terms summed into each Poisson row (roundoff scale)."""
        s = abs(self.lap) @ np.abs(u) + self.kappa * self.vol * (npos + nneg) + np.abs(self.S_V)
        s[self.dirichlet] = np.abs(self.uD) + 1.0
        return s

    def edge_flux(self, which: str, u, d):
        """SG flux per edge (P->Q, scaled) and its partial derivatives."""
        c = self.carrier(which)
        k = self.k_pos if which == "pos" else self.k_neg
        P, Q = self.eP, self.eQ
        return _kernels.sg_edges(k, c.valence, u[P], u[Q], d[P], d[Q])

    def transport_residual(self, which: str, u, d, *, jacobian=False):
        z = self.carrier(which).valence
        P, Q = self.eP, self.eQ
        ez = np.exp(-z * u)
        n = ez * (1.0 + d)
        f, kw, fup, fuq = self.edge_flux(which, u, d)
        G = f - 0.5 * self.adv * (n[P] + n[Q])
        S = self.S_pos if which == "pos" else self.S_neg
        R = np.bincount(Q, G, self.N) - np.bincount(P, G, self.N) + S
        hi, lo, va = self.end_hi, self.end_lo, self.v * self.end_area
        R[hi] += va * n[hi]
        R[lo] -= va * n[lo]
        R[self.dirichlet] = d[self.dirichlet] - self.dirichlet_deviation(which)
        if not jacobian:
            return R
        half = 0.5 * self.adv
        gP = kw - half * ez[P]           # dG/dd_P
        gQ = -kw - half * ez[Q]          # dG/dd_Q
        hP = fup + half * z * n[P]       # dG/du_P
        hQ = fuq + half * z * n[Q]       # dG/du_Q
        rows = np.concatenate((P, P, Q, Q, hi, lo))
        cols = np.concatenate((P, Q, P, Q, hi, lo))
        Jd = sp.csr_matrix((np.concatenate((-gP, -gQ, gP, gQ, va * ez[hi], -va * ez[lo])),
                            (rows, cols)), shape=(self.N, self.N))
        Ju = sp.csr_matrix((np.concatenate((-hP, -hQ, hP, hQ, -z * va * n[hi], z * va * n[lo])),
                            (rows, cols)), shape=(self.N, self.N))
        return R, self._mask @ Jd + self._ident_D, self._mask @ Ju

    def transport_scale(self, which: str, u, d):
        z = self.carrier(which).valence
        P, Q = self.eP, self.eQ
        n = np.exp(-z * u) * (1.0 + d)
        _, kw, _, _ = self.edge_flux(which, u, d)
        t = np.abs(kw) * (np.abs(d[P]) + np.abs(d[Q])) + 0.5 * self.adv * (n[P] + n[Q])
        S = self.S_pos if which == "pos" else self.S_neg
        s = np.bincount(Q, t, self.N) + np.bincount(P, t, self.N) + np.abs(S)
        s[self.end_hi] += self.v * self.end_area * n[self.end_hi]
        s[self.end_lo] += self.v * self.end_area * n[self.end_lo]
        return s

    def residual(self, x):
        u, dp, dn = self.split(x)
        npos, nneg = self.concentrations(x)
        return (self.poisson_residual(u, npos, nneg),
                self.transport_residual("pos", u, dp),
                self.transport_residual("neg", u, dn))

    def jacobian(self, x):
        """Fully coupled Jacobian, unknowns interleaved as [u, d+, d-] per node."""
        u, dp, dn = self.split(x)
        npos, nneg = self.concentrations(x)
        N = self.N
        _, Jpp, Jpu = self.transport_residual("pos", u, dp, jacobian=True)
        _, Jnn, Jnu = self.transport_residual("neg", u, dn, jacobian=True)
        kv = self.kappa * self.vol * self.free
        zp, zn = self.pos.valence, self.neg.valence
        Juu = self._mask @ self.lap + self._ident_D + sp.diags(-kv * (zp * npos - zn * nneg))
        Jup = sp.diags(kv * np.exp(-zp * u))
        Jun = sp.diags(-kv * np.exp(-zn * u))
        Z = sp.csr_matrix((N, N))
        J = sp.bmat([[Juu, Jup, Jun], [Jpu, Jpp, Z], [Jnu, Z, Jnn]], format="csr")
        perm = np.arange(3 * N).reshape(3, N).T.ravel()
        return J[perm][:, perm]

    @staticmethod
    def split(x):
        N = x.size // 3
        return x[:N], x[N:2 * N], x[2 * N:]

    # -- norms ----------------------------------------------------------------
    def block_norms(self, x):
        Rv, Rp, Rn = self.residual(x)
        return np.linalg.norm(Rv), np.linalg.norm(np.concatenate((Rp, Rn)))

    def block_scales(self, x):
        """Norms of the summed term magnitudes, Dirichlet rows excluded."""
        u, dp, dn = self.split(x)
        npos, nneg = self.concentrations(x)
        sv = self.poisson_scale(u, npos, nneg)
        sc = np.concatenate((self.transport_scale("pos", u, dp),
                             self.transport_scale("neg", u, dn)))
        sv[self.dirichlet] = 0.0
        sc[np.concatenate((self.dirichlet, self.dirichlet + self.N))] = 0.0
        return np.linalg.norm(sv), np.linalg.norm(sc)


# ---------------------------------------------------------------------------
# linear algebra

def _linear_solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    # row equilibration: Poisson and transport rows differ by ~15 decades
    A = A.tocsr()
    scale = 1.0 / np.maximum(abs(A).max(axis=1).toarray().ravel(), 1e-300)
    A = (sp.diags(scale) @ A).tocsc()
    b = scale * b
    if A.shape[0] <= DIRECT_SOLVE_LIMIT:
        return spla.splu(A).solve(b)
    ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
    M = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.gmres(A, b, M=M, rtol=ITERATIVE_RTOL, atol=0.0, restart=200, maxiter=50)
    if info != 0:
        raise NumericalError(f"iterative linear solve did not converge (info={info})")
    return x


# ---------------------------------------------------------------------------
# nonlinear driver

class _Tracker:
    """Block-relative residual bookkeeping.

    Each block (Poisson, transport) is measured against its value at the
    initial guess.  A block that starts at exactly zero is measured against
    the magnitude of its summed terms instead, and a block whose residual is
    down at the roundoff level of those terms counts as converged.
    """

    def __init__(self, system: PNPSystem, x0: np.ndarray, tol: float):
        self.system = system
        self.tol = tol
        r0 = system.block_norms(x0)
        s0 = system.block_scales(x0)
        self.r0 = tuple(r if r > 0 else s for r, s in zip(r0, s0))
        self.history: list[float] = []
        self.min_conc: list[float] = []

    def measure(self, x) -> tuple[float, bool]:
        sys_ = self.system
        r = sys_.block_norms(x)
        floors = [np.finfo(float).eps * ROUNDOFF_FACTOR * s for s in sys_.block_scales(x)]
        rel, ok = [], True
        for ri, r0, fl in zip(r, self.r0, floors):
            rel.append(ri / r0 if r0 > 0 else 0.0)
            ok &= (ri <= self.tol * r0) or (ri <= fl)
        value = float(max(rel))
        self.history.append(value)
        npos, nneg = sys_.concentrations(x)
        self.min_conc.append(float(min(npos.min(), nneg.min())))
        return value, bool(ok)


def _positive(x, N) -> bool:
    return bool(np.all(x[N:] > -1.0)) and bool(np.all(np.isfinite(x)))


def _gummel_map(system: PNPSystem, x: np.ndarray) -> np.ndarray:
    u0, dp, dn = (a.copy() for a in system.split(x))
    u = u0.copy()
    zp, zn = system.pos.valence, system.neg.valence
    kv = system.kappa * system.vol * system.free
    lapJ = system._mask @ system.lap + system._ident_D
    # nonlinear Poisson at frozen Slotboom deviations (quasi-Fermi levels)
    for _ in range(50):
        npos = np.exp(-zp * u) * (1.0 + dp)
        nneg = np.exp(-zn * u) * (1.0 + dn)
        R = system.poisson_residual(u, npos, nneg)
        J = lapJ - sp.diags(kv * (zp * npos - zn * nneg))
        du = np.clip(-_linear_solve(J, R), -1.0, 1.0)
        u += du
        if np.max(np.abs(du)) < 1e-13:
            break
    out = [u]
    for which, d in (("pos", dp), ("neg", dn)):
        # transport is linear in d at fixed u: one Newton step solves it
        R, Jd, _ = system.transport_residual(which, u, d, jacobian=True)
        out.append(d - _linear_solve(Jd, R))
    return np.concatenate(out)


def _anderson(xs: list, gs: list, x: np.ndarray, gx: np.ndarray) -> np.ndarray:
    """Type-II Anderson step from the stored iterates and fixed-point residuals."""
    if len(xs) < 2:
        return x + gx
    dX = np.column_stack([xs[i + 1] - xs[i] for i in range(len(xs) - 1)])
    dG = np.column_stack([gs[i + 1] - gs[i] for i in range(len(gs) - 1)])
    gamma, *_ = np.linalg.lstsq(dG, gx, rcond=None)
    return x + gx - (dX + dG) @ gamma


def _newton(system: PNPSystem, x: np.ndarray, tracker: _Tracker, max_iter: int):
    N = system.N
    perm = np.arange(3 * N).reshape(3, N).T.ravel()
    inv = np.argsort(perm)
    it, ok = 0, False
    while it < max_iter:
        it += 1
        R = np.concatenate(system.residual(x))
        J = system.jacobian(x)
        dx = -_linear_solve(J, R[perm])[inv]
        # keep 1 + d > 0: never step more than 90% of the way to the bound
        d, dd = x[N:], dx[N:]
        neg = dd < 0
        lam = 1.0
        if np.any(neg):
            lam = min(1.0, 0.9 * float(np.min((1.0 + d[neg]) / -dd[neg])))
        base = np.linalg.norm(R)
        for _ in range(30):
            xt = x + lam * dx
            if (np.linalg.norm(np.concatenate(system.residual(xt))) <= (1 - 1e-4 * lam) * base
                    or lam < 1e-6):
                break
            lam *= 0.5
        x = xt
        res, ok = tracker.measure(x)
        logger.debug("newton %d: rel residual %.3e (step %.3g)", it, res, lam)
        if ok:
            break
    return x, it, ok


def _iterate(system: PNPSystem, x0: np.ndarray, tol: float, settings: SolverSettings):
    tracker = _Tracker(system, x0, tol)
    x = x0.copy()
    res, ok = tracker.measure(x)
    it = 0
    method = "gummel"
    xs, gs = [], []
    depth = max(0, settings.anderson_depth)
    N = system.N
    while not ok and it < settings.max_iter:
        it += 1
        gx = _gummel_map(system, x) - x
        if not _positive(x + gx, N):
            raise NumericalError("non-positive concentration after a Gummel sweep")
        xs.append(x.copy())
        gs.append(gx)
        xs, gs = xs[-(depth + 1):], gs[-(depth + 1):]
        x_new = _anderson(xs, gs, x, gx) if depth else x + gx
        if not _positive(x_new, N):
            x_new = x + gx
            xs, gs = [], []
        x = x_new
        res, ok = tracker.measure(x)
        logger.debug("gummel %d: rel residual %.3e", it, res)
        h = tracker.history
        k = settings.stall_sweeps
        stalled = len(h) > k and h[-1] > 0.95 * h[-1 - k]
        if not ok and it < settings.max_iter and (stalled or it >= settings.gummel_sweeps):
            logger.info("gummel at %.3e after %d sweeps (%s); switching to Newton", res, it,
                        "stalled" if stalled else "sweep budget")
            method = "gummel+newton"
            x, n_it, ok = _newton(system, x, tracker, settings.max_iter - it)
            it += n_it
            break
    return x, it, ok, tracker, method


def solve_system(system: PNPSystem, tol: float, settings: SolverSettings,
                 x0: np.ndarray | None = None):
    """Run the nonlinear solve; returns (x, iterations, converged, tracker, method)."""
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    N = system.N
    if x0 is None:
        x0 = np.zeros(3 * N)
        x0[system.dirichlet] = system.uD
        x0[N + system.dirichlet] = system.dirichlet_deviation("pos")
        x0[2 * N + system.dirichlet] = system.dirichlet_deviation("neg")
    return _iterate(system, x0, tol, settings)


def _carriers(electrolyte: ElectrolyteModel) -> tuple[Carrier, Carrier]:
    lp, ln = electrolyte.lumped_pos, electrolyte.lumped_neg
    return (Carrier(lp.valence, lp.diffusion, lp.conc_bulk),
            Carrier(ln.valence, ln.diffusion, ln.conc_bulk))


def thermal_voltage(electrolyte: ElectrolyteModel, constants: PhysicalConstants) -> float:
    return constants.R_gas * electrolyte.temperature / constants.F


def boundary_from_wave(mesh: AxisymmetricMesh, electrolyte: ElectrolyteModel,
                       wave: MembraneWave) -> tuple[BoundaryData, MembraneWave]:
    if wave.E_m is None or wave.flux_pos is None:
        raise ValueError("wave lacks boundary profiles")
    if mesh.xi[0] < wave.xi[0] - 1e-12 or mesh.xi[-1] > wave.xi[-1] + 1e-12:
        raise ValueError(f"wave covers xi in [{wave.xi[0]:.4g}, {wave.xi[-1]:.4g}] m, "
                         f"mesh needs [{mesh.xi[0]:.4g}, {mesh.xi[-1]:.4g}] m")
    w = wave.resample(np.clip(mesh.xi, wave.xi[0], wave.xi[-1]))
    nz = mesh.xi.size
    lp, ln = electrolyte.lumped_pos, electrolyte.lumped_neg
    bd = BoundaryData(dVdr_membrane=-w.E_m, flux_pos=w.flux_pos, flux_neg=w.flux_neg,
                      outer_V=np.zeros(nz), outer_c_pos=np.full(nz, lp.conc_bulk),
                      outer_c_neg=np.full(nz, ln.conc_bulk))
    return bd, w


def solve_pnp(mesh: AxisymmetricMesh, electrolyte: ElectrolyteModel, wave: MembraneWave,
              tol: float = 1e-8, *, constants: PhysicalConstants | None = None,
              settings: SolverSettings | None = None,
              boundary: BoundaryData | None = None) -> FieldSolution:
    """Solve the steady traveling-frame PNP problem driven by ``wave``.

    Parameters
    ----------
    mesh : AxisymmetricMesh
    electrolyte : ElectrolyteModel
        Supplies the lumped carriers, temperature and permittivity.
    wave : MembraneWave
        Membrane profiles; must cover the mesh's axial extent.
    tol : float
        Relative tolerance on each residual block (Poisson, transport).
    boundary : BoundaryData, optional
        Overrides the boundary data derived from ``wave`` (used for
        manufactured-solution checks).

    Raises
    ------
    ConvergenceError
        Iteration cap reached; ``.solution`` and ``.diagnostics`` are set.
    NumericalError
        A sweep produced a non-positive concentration.
    """
    constants = constants or PhysicalConstants()
    settings = settings or SolverSettings(tol=tol)
    t0 = time.perf_counter()
    if boundary is None:
        boundary, w = boundary_from_wave(mesh, electrolyte, wave)
    else:
        w = wave
    pos, neg = _carriers(electrolyte)
    Vt = thermal_voltage(electrolyte, constants)
    system = PNPSystem(mesh, pos, neg, eps=electrolyte.permittivity, faraday=constants.F,
                       thermal_voltage=Vt, velocity=w.velocity if w is not None else 0.0,
                       bd=boundary)
    x, it, ok, tracker, method = solve_system(system, tol, settings)
    sol = _package(system, x, it, tracker, method, constants, w)
    sol.diagnostics["wall_time_s"] = time.perf_counter() - t0
    if not ok:
        Rv, Rp, Rn = system.residual(x)
        worst = int(np.argmax(np.abs(Rv) + np.abs(Rp) + np.abs(Rn)))
        j, i = divmod(worst, system.nr)
        diag = {"residual_history": tracker.history, "worst_node": {
            "index": worst, "r_m": float(mesh.r[i]), "xi_m": float(mesh.xi[j])},
            "iterations": it}
        sol.diagnostics.update(diag)
        raise ConvergenceError(
            f"PNP did not converge in {it} iterations (rel residual {tracker.history[-1]:.3e})",
            diag, sol)
    logger.info("PNP converged: %d iterations (%s), rel residual %.3e",
                it, method, tracker.history[-1])
    return sol


def _package(system: PNPSystem, x, it, tracker, method, constants, wave) -> FieldSolution:
    nz, nr = system.nz, system.nr
    u, dp, dn = system.split(x)
    npos, nneg = system.concentrations(x)
    cb = system.cb
    fp = system.edge_flux("pos", u, dp)[0]
    fn = system.edge_flux("neg", u, dn)[0]
    # flux densities per face, mol/m^2/s (physical part only, no frame advection)
    face = {"pos": fp * cb / system.eA, "neg": fn * cb / system.eA}
    rv, rc = system.block_norms(x)
    diagnostics = {
        "residual_blocks": {"poisson": float(rv), "transport": float(rc)},
        "initial_blocks": {"poisson": float(tracker.r0[0]), "transport": float(tracker.r0[1])},
        "min_concentration_per_iterate": tracker.min_conc,
        "backend": _kernels.backend(),
    }
    sol = FieldSolution(
        mesh=system.mesh, V=(u * system.Vt).reshape(nz, nr),
        c_pos=(npos * cb).reshape(nz, nr), c_neg=(nneg * cb).reshape(nz, nr),
        residual_norm=float(tracker.history[-1]), iterations=int(it),
        residual_history=list(tracker.history), method=method, face_flux=face,
        diagnostics=diagnostics, faraday=constants.F,
        membrane_flux=(system.bd.flux_pos.copy(), system.bd.flux_neg.copy()), wave=wave)
    sol._system = system
    sol._x = x
    return sol


# ---------------------------------------------------------------------------
# post-processing

def electric_field(sol: FieldSolution) -> tuple[np.ndarray, np.ndarray]:
    """E = -grad V, second-order differences (one-sided at the edges)."""
    m = sol.mesh
    E_r = -np.gradient(sol.V, m.r, axis=1, edge_order=2)
    E_xi = -np.gradient(sol.V, m.xi, axis=0, edge_order=2)
    return E_r, E_xi


def charge_density(sol: FieldSolution) -> np.ndarray:
    return sol.faraday * (sol.c_pos - sol.c_neg)


def current_density(sol: FieldSolution) -> tuple[np.ndarray, np.ndarray]:
    """J = F (f+ - f-) from the solver's own face fluxes, averaged to nodes.

    The membrane row takes the imposed flux and the axial end rows the
    imposed zero flux.
    """
    nz, nr = sol.mesh.shape
    nre = (nr - 1) * nz
    J_face = sol.faraday * (sol.face_flux["pos"] - sol.face_flux["neg"])
    Jr_f = J_face[:nre].reshape(nz, nr - 1)
    Jz_f = J_face[nre:].reshape(nz - 1, nr)
    J_r = np.empty((nz, nr))
    J_r[:, 1:-1] = 0.5 * (Jr_f[:, 1:] + Jr_f[:, :-1])
    J_r[:, -1] = Jr_f[:, -1]
    fpos, fneg = sol.membrane_flux
    J_r[:, 0] = sol.faraday * (fpos - fneg)
    J_xi = np.zeros((nz, nr))
    J_xi[1:-1, :] = 0.5 * (Jz_f[1:, :] + Jz_f[:-1, :])
    return J_r, J_xi


def derived_fields(sol: FieldSolution) -> DerivedFields:
    E_r, E_xi = electric_field(sol)
    J_r, J_xi = current_density(sol)
    return DerivedFields(charge_density(sol), E_r, E_xi, J_r, J_xi)


def radial_profile(sol: FieldSolution, values: np.ndarray, xi: float = 0.0):
    """Samples of a nodal field along the grid line nearest to ``xi``.

    Returns ``(r, values_along_r, xi_used)``.
    """
    m = sol.mesh
    if not (m.xi[0] - 1e-15 <= xi <= m.xi[-1] + 1e-15):
        raise ValueError(f"xi = {xi:g} m outside the mesh [{m.xi[0]:g}, {m.xi[-1]:g}]")
    j = int(np.argmin(np.abs(m.xi - xi)))
    return m.r.copy(), np.asarray(values)[j, :].copy(), float(m.xi[j])


def conservation_balance(sol: FieldSolution) -> dict:
    """Species balances over all non-Dirichlet control volumes.

    For each carrier: membrane influx, influx from the outer row and the net
    advective outflow through the axial ends.  ``relative_imbalance`` is the
    discrepancy divided by the largest of the three.
    """
    system = sol._system
    x = sol._x
    u, dp, dn = system.split(x)
    npos, nneg = system.concentrations(x)
    out = {}
    for which, n, d in (("pos", npos, dp), ("neg", nneg, dn)):
        f = system.edge_flux(which, u, d)[0]
        G = f - 0.5 * system.adv * (n[system.eP] + n[system.eQ])
        into_free = system.free[system.eQ] & ~system.free[system.eP]
        out_free = system.free[system.eP] & ~system.free[system.eQ]
        outer_in = float(G[into_free].sum() - G[out_free].sum())
        S = system.S_pos if which == "pos" else system.S_neg
        membrane_in = float(S[system.free].sum())
        adv_out = float(system.v * (system.end_area * n[system.end_lo]).sum()
                        - system.v * (system.end_area * n[system.end_hi]).sum())
        scale = max(abs(membrane_in), abs(outer_in), abs(adv_out), 1e-300)
        out[which] = {
            "membrane_influx": membrane_in * system.cb,
            "outer_influx": outer_in * system.cb,
            "advective_outflow": adv_out * system.cb,
            "relative_imbalance": abs(membrane_in + outer_in - adv_out) / scale,
        }
    return out


def write_field_csv(sol: FieldSolution, derived: DerivedFields, path: str | Path) -> Path:
    m = sol.mesh
    XI, R = np.meshgrid(m.xi, m.r, indexing="ij")
    cols = [R, XI, sol.V, sol.c_pos, sol.c_neg, derived.rho, derived.E_r, derived.E_xi,
            derived.J_r, derived.J_xi]
    return write_csv(path, ["r_m", "xi_m", "V_V", "cpos_molm3", "cneg_molm3", "rho_Cm3",
                            "Er_Vpm", "Exi_Vpm", "Jr_Apm2", "Jxi_Apm2"],
                     [np.asarray(c).ravel() for c in cols])
