from dataclasses import replace

import numpy as np
import pytest

from axonfield.io import read_csv
from axonfield.magnetics import (enclosed_current_loop, fit_inverse_r, magnetic_field,
                                 write_bphi_csv)
from axonfield.mesh import AxisymmetricMesh

MU0 = 1.25663706212e-6


def _synthetic(nz=7, nr=40):
    mesh = AxisymmetricMesh(np.geomspace(0.5e-6, 1.5e-6, nr), np.linspace(-1e-5, 1e-5, nz))

    class W:
        xi = mesh.xi
        B_m = 1e-9 * np.sin(np.linspace(0, 3, nz))
    return mesh, W()


def test_no_external_current_gives_inverse_r():
    mesh, w = _synthetic()
    f = magnetic_field(mesh, np.zeros(mesh.shape), w, MU0)
    expected = w.B_m[:, None] * mesh.r[0] / mesh.r[None, :]
    assert np.array_equal(f.B_phi, expected)
    assert np.array_equal(f.B_phi[:, 0], w.B_m)


def test_linearity():
    mesh, w = _synthetic()
    J = np.random.default_rng(0).standard_normal(mesh.shape)
    a = magnetic_field(mesh, J, w, MU0)
    w2 = type(w)()
    w2.B_m = 3.0 * w.B_m
    b = magnetic_field(mesh, 3.0 * J, w2, MU0)
    assert np.allclose(b.B_phi, 3.0 * a.B_phi, rtol=1e-14, atol=0)


def test_mesh_mismatch():
    mesh, w = _synthetic()
    with pytest.raises(ValueError, match="mesh mismatch"):
        magnetic_field(mesh, np.zeros((3, 3)), w, MU0)
    other = AxisymmetricMesh(mesh.r, mesh.xi + 1e-6)
    with pytest.raises(ValueError, match="mesh mismatch"):
        magnetic_field(other, np.zeros(mesh.shape), w, MU0)


def test_fit_exact_model():
    r = np.linspace(0.5e-6, 1.5e-6, 50)
    fit = fit_inverse_r(r, 7e-16 / r)
    assert fit.coefficient == pytest.approx(7e-16, rel=1e-12)
    assert fit.rms_residual < 1e-12
    assert fit.n_samples == 50


def test_fit_flags_constant_input():
    r = np.linspace(0.5e-6, 1.5e-6, 50)
    assert fit_inverse_r(r, np.full_like(r, 1e-9)).rms_residual > 0.1


def test_fit_errors():
    r = np.linspace(0.5e-6, 1.5e-6, 50)
    with pytest.raises(ValueError, match="empty"):
        fit_inverse_r(r, 1 / r, (2e-6, 3e-6))
    with pytest.raises(ValueError):
        fit_inverse_r(r[:5], 1 / r[:5])
    with pytest.raises(ValueError):
        fit_inverse_r(np.linspace(-1, 1, 20), np.ones(20))


# ---------------------------------------------------------------------------
# action-potential run

def test_peak_at_membrane(ap_run):
    B = np.abs(ap_run.mag.B_phi)
    assert B.max() == pytest.approx(0.95e-9, rel=0.3)
    j, i = np.unravel_index(np.argmax(B), B.shape)
    assert i == 0


def test_ampere_consistency(ap_run):
    m = ap_run.mag
    r = m.r
    lhs = r[None, :] * m.B_phi - r[0] * m.B_phi[:, :1]
    rhs = MU0 * enclosed_current_loop(r, ap_run.der.J_xi)
    scale = np.abs(rhs).max()
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * scale


def test_external_current_is_a_small_correction(ap_run):
    m = ap_run.mag
    assert np.all(np.abs(m.current_term).max(axis=1) <= 0.05 * np.abs(m.membrane_term[:, 0]))


def test_inverse_r_fit_on_peak_profile(ap_run, ci_config):
    m = ap_run.mag
    j = int(np.argmax(np.abs(m.B_phi[:, 0])))
    fit = fit_inverse_r(m.r, m.B_phi[j], (m.r[0], ci_config.geometry.outer_radius))
    assert fit.rms_residual < 0.05
    assert fit.coefficient == pytest.approx(m.r[0] * m.B_phi[j, 0], rel=1e-3)


@pytest.mark.xfail(strict=True, reason="a 1/r field keeps a third of its membrane value "
                   "at the outer radius; see notes")
def test_decays_at_outer_radius(ap_run):
    B = np.abs(ap_run.mag.B_phi)
    assert B[:, -1].max() <= 1e-3 * B.max()


@pytest.mark.xfail(strict=True, reason="1/r extrapolation to 2 um leaves a quarter of the "
                   "peak; see notes")
def test_extrapolated_decay_by_two_micrometres(ap_run):
    m = ap_run.mag
    j = int(np.argmax(np.abs(m.B_phi[:, 0])))
    fit = fit_inverse_r(m.r, m.B_phi[j])
    assert abs(fit.coefficient / 2e-6) <= 0.05 * abs(m.B_phi[j, 0])


@pytest.mark.xfail(strict=True, reason="the trailing window edge still carries "
                   "after-hyperpolarisation current; see notes")
def test_decays_at_axial_ends(ap_run):
    B = np.abs(ap_run.mag.B_phi)
    assert max(B[0].max(), B[-1].max()) <= 1e-3 * B.max()


def test_bphi_csv(tmp_path):
    mesh, w = _synthetic(3, 9)
    f = magnetic_field(mesh, np.zeros(mesh.shape), w, MU0)
    d = read_csv(write_bphi_csv(f, tmp_path / "b.csv"))
    assert list(d) == ["r_m", "xi_m", "Bphi_T"]
    assert np.array_equal(d["Bphi_T"], f.B_phi.ravel())
