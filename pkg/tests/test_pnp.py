import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp

import _mms
from axonfield.hh import resting_wave
from axonfield.mesh import AxisymmetricMesh
from axonfield.params import SolverSettings
from axonfield.pnp import (BoundaryData, Carrier, FieldSolution, PNPSystem,
                           conservation_balance, electric_field, radial_profile,
                           solve_system, thermal_voltage, write_field_csv)
from axonfield.io import read_csv

MMS_LEVELS = (8, 16, 32, 64)


def _mms_errors(n):
    s = _mms.build(n)
    x, it, ok, _, _ = solve_system(s, 1e-12, SolverSettings(tol=1e-12))
    assert ok
    u, _, _ = s.split(x)
    npos, nneg = s.concentrations(x)
    shape = s.mesh.shape
    got = (u.reshape(shape) * s.Vt, npos.reshape(shape) * s.cb, nneg.reshape(shape) * s.cb)
    return [np.max(np.abs(g - e)) / np.max(np.abs(e)) for g, e in zip(got, _mms.exact(s))]


def test_manufactured_solution_order():
    errs = np.array([_mms_errors(n) for n in MMS_LEVELS])
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all(orders[-2:] >= 1.9), orders
    assert errs[-1].max() < 1e-3


def _trivial_system(nz=6, nr=9, velocity=0.7):
    r = np.linspace(500e-9, 520e-9, nr)
    xi = np.linspace(0, 10e-6, nz)
    cb = 149.0
    bd = BoundaryData(np.zeros(nz), np.zeros(nz), np.zeros(nz), np.zeros(nz),
                      np.full(nz, cb), np.full(nz, cb))
    return PNPSystem(AxisymmetricMesh(r, xi), Carrier(1, 1.6e-9, cb), Carrier(-1, 2e-9, cb),
                     eps=7e-10, faraday=96485.33212, thermal_voltage=0.0267,
                     velocity=velocity, bd=bd)


def test_trivial_fixed_point():
    s = _trivial_system()
    x = np.zeros(3 * s.N)
    for block in s.residual(x):
        assert np.max(np.abs(block)) == 0.0
    x, it, ok, tracker, _ = solve_system(s, 1e-10, SolverSettings())
    assert ok and it == 0
    assert np.all(x == 0)


def test_jacobian_matches_finite_differences():
    s = _mms.build(6)
    rng = np.random.default_rng(3)
    x = 0.1 * rng.standard_normal(3 * s.N)
    dx = rng.standard_normal(3 * s.N)
    perm = np.arange(3 * s.N).reshape(3, s.N).T.ravel()
    J = s.jacobian(x)
    Jdx = np.empty(3 * s.N)
    Jdx[perm] = J @ dx[perm]
    h = 1e-6
    fd = (np.concatenate(s.residual(x + h * dx)) - np.concatenate(s.residual(x - h * dx))) / (2 * h)
    assert np.allclose(Jdx, fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())


def test_rejects_bad_inputs():
    s = _trivial_system()
    with pytest.raises(ValueError):
        solve_system(s, 0.0, SolverSettings())
    with pytest.raises(ValueError, match="shape"):
        PNPSystem(s.mesh, s.pos, s.neg, eps=7e-10, faraday=1.0, thermal_voltage=0.0267,
                  velocity=0.0, bd=BoundaryData(*(np.zeros(3),) * 6))


# ---------------------------------------------------------------------------
# resting equilibrium

def _pb_reference(config, r, dVdr):
    """Independent radial Poisson-Boltzmann boundary-value solve."""
    el = config.electrolyte
    Vt = thermal_voltage(el, config.constants)
    k = 2 * config.constants.F * el.lumped_pos.conc_bulk / el.permittivity
    R, L = r[0], 60e-9
    x = np.linspace(R, R + L, 2001)
    sol = solve_bvp(lambda s, y: np.vstack([y[1], -y[1] / s + k * np.sinh(y[0] / Vt)]),
                    lambda a, b: np.array([a[1] - dVdr, b[0]]),
                    x, np.zeros((2, x.size)), tol=1e-10, max_nodes=10**6)
    assert sol.status == 0
    return sol.sol, R + L


def test_equilibrium_matches_poisson_boltzmann(ci_config, rest_run):
    j = rest_run.mesh.shape[0] // 2
    r = rest_run.mesh.r
    V = rest_run.sol.V[j]
    ref, r_max = _pb_reference(ci_config, r, -rest_run.sol.wave.E_m[j])
    sel = r <= r_max
    Vpb = ref(r[sel])[0]
    assert np.max(np.abs(V[sel] - Vpb)) <= 0.02 * abs(Vpb[0])
    assert np.max(np.abs(V[~sel])) <= 0.02 * abs(Vpb[0])


def test_equilibrium_debye_decay(rest_run):
    j = rest_run.mesh.shape[0] // 2
    dr = rest_run.mesh.r - rest_run.mesh.r[0]
    E = np.abs(rest_run.der.E_r[j])
    rho = np.abs(rest_run.der.rho[j])
    d_E = dr[np.argmax(E < 0.01 * E[0])]
    assert 1.5e-9 <= d_E <= 6e-9
    assert np.all(rho[dr >= 5e-9] <= 0.01 * rho[0])
    assert rest_run.der.rho[j, 0] > 0


def test_equilibrium_current_vanishes(rest_run):
    assert np.max(np.abs(rest_run.der.J_r)) < 1e-3
    assert np.max(np.abs(rest_run.der.J_xi)) < 1e-3


def _check_dirichlet_and_positivity(run):
    sol = run.sol
    cb = sol.c_pos[0, -1]
    assert np.max(np.abs(sol.V[:, -1])) < 1e-6
    assert np.max(np.abs(sol.c_pos[:, -1] / cb - 1)) < 1e-6
    assert np.max(np.abs(sol.c_neg[:, -1] / cb - 1)) < 1e-6
    assert np.max(np.abs(run.der.rho[:, -1])) < 1e-4
    assert sol.c_pos.min() >= 0 and sol.c_neg.min() >= 0
    assert min(sol.diagnostics["min_concentration_per_iterate"]) > 0


def test_rest_dirichlet_and_positivity(rest_run):
    _check_dirichlet_and_positivity(rest_run)


# ---------------------------------------------------------------------------
# action-potential run (CI mesh)

def test_ap_converged(ap_run, ci_config):
    sol = ap_run.sol
    assert sol.residual_norm < ci_config.solver.tol
    blocks = sol.diagnostics["residual_blocks"]
    init = sol.diagnostics["initial_blocks"]
    assert blocks["poisson"] <= ci_config.solver.tol * init["poisson"] + 1e-300
    assert blocks["transport"] <= ci_config.solver.tol * init["transport"] + 1e-300


def test_ap_dirichlet_and_positivity(ap_run):
    _check_dirichlet_and_positivity(ap_run)


def test_ap_conservation(ap_run):
    for which, b in conservation_balance(ap_run.sol).items():
        assert b["relative_imbalance"] < 1e-6, which


def test_ap_charge_density_extremes(ap_run):
    rho0 = ap_run.der.rho[:, 0]
    assert rho0.min() == pytest.approx(-3e6, rel=0.5)
    assert rho0.max() == pytest.approx(0.5e6, rel=0.5)
    assert np.array_equal(ap_run.der.rho, ap_run.sol.faraday * (ap_run.sol.c_pos - ap_run.sol.c_neg))


def test_ap_membrane_field(ap_run):
    E0 = ap_run.der.E_r[:, 0]
    assert np.max(np.abs(E0)) == pytest.approx(3.3e6, rel=0.5)


def test_ap_peak_field_profile_decays(ap_run):
    E = ap_run.der.E_r
    j = int(np.argmax(np.abs(E[:, 0])))
    r, prof, _ = radial_profile(ap_run.sol, E, ap_run.mesh.xi[j])
    dr = r - r[0]
    a = np.abs(prof)
    d1 = dr[np.argmax(a < 0.01 * a[0])]
    assert 1.5e-9 <= d1 <= 6e-9
    # monotone through the screened layer; beyond it only the bulk field remains
    floor = 1e-5 * a[0]
    k = int(np.argmax(a < floor))
    screened = a[(dr >= 5e-9) & (np.arange(a.size) <= k)]
    assert np.all(np.diff(screened) <= 0)
    assert np.all(a[k:] < floor)


@pytest.mark.xfail(strict=True, reason="external axial current exceeds the expected "
                   "magnitude and runs against the internal current; see notes")
def test_ap_external_current_magnitude_and_sign(ap_run, wave):
    J = ap_run.der.J_xi
    k = np.unravel_index(np.argmax(np.abs(J)), J.shape)
    assert abs(J[k]) == pytest.approx(0.1, rel=0.5)
    # the internal axial current at the peak runs toward +xi ahead of the AP
    assert J[k] > 0


def test_radial_profile_extraction(ap_run):
    sol = ap_run.sol
    r, v, xi = radial_profile(sol, sol.V, 0.0)
    assert v[-1] == sol.V[np.argmin(np.abs(sol.mesh.xi)), -1]
    assert np.array_equal(r, sol.mesh.r)
    r, c, _ = radial_profile(sol, np.full(sol.mesh.shape, 3.0), 0.0)
    assert np.all(c == 3.0)
    with pytest.raises(ValueError):
        radial_profile(sol, sol.V, 1.0)


def test_linear_potential_gives_exact_field():
    m = AxisymmetricMesh(np.geomspace(1.0, 2.0, 13) * 1e-6, np.linspace(0, 1e-5, 11))
    XI, R = np.meshgrid(m.xi, m.r, indexing="ij")
    a, b = 3.7e4, -1.2e5
    sol = FieldSolution(m, a * XI + b * R, np.ones(m.shape), np.ones(m.shape), 0.0, 0)
    E_r, E_xi = electric_field(sol)
    assert np.allclose(E_xi, -a, rtol=1e-12, atol=0)
    assert np.allclose(E_r, -b, rtol=1e-10, atol=0)


def test_field_csv(tmp_path, rest_run):
    p = write_field_csv(rest_run.sol, rest_run.der, tmp_path / "f.csv")
    d = read_csv(p)
    assert list(d) == ["r_m", "xi_m", "V_V", "cpos_molm3", "cneg_molm3", "rho_Cm3",
                       "Er_Vpm", "Exi_Vpm", "Jr_Apm2", "Jxi_Apm2"]
    assert np.array_equal(d["V_V"], rest_run.sol.V.ravel())
