import math

import numpy as np
import pytest
from scipy.special import j0, jn_zeros

from axonfield.errors import ConfigError
from axonfield.io import read_csv
from axonfield.pillar import (J0_ZERO, ON_SIDE, ON_TOP, PillarGeometry, SensorSpec,
                              assess_detectability, field_at_nv, field_on_top,
                              fit_decay_constant, line_profile, potential_on_top,
                              solve_pillar, write_grid_csv, write_line_csv)

E_M = 4.54e7          # V/m
CI_SPACING = 5e-9


@pytest.fixture(scope="module")
def geom():
    return PillarGeometry(200e-9)


@pytest.fixture(scope="module")
def on_top_grid(geom):
    return solve_pillar(geom, E_M, CI_SPACING, ON_TOP)


@pytest.fixture(scope="module")
def on_side_grid(geom):
    return solve_pillar(geom, E_M, CI_SPACING, ON_SIDE)


def test_bessel_zero():
    assert J0_ZERO == pytest.approx(jn_zeros(0, 1)[0], rel=1e-15)
    assert abs(j0(J0_ZERO)) < 1e-15


def test_geometry_invariants(geom):
    assert geom.contact_area == pytest.approx(math.pi * 1e-14)
    assert geom.patch_side**2 == pytest.approx(geom.contact_area, rel=1e-15)
    with pytest.raises(ValueError):
        PillarGeometry(0.0)
    with pytest.raises(ValueError):
        PillarGeometry(200e-9, nv_depth=-1e-9)
    with pytest.raises(ValueError):
        PillarGeometry(200e-9, contact="tilted")


def test_closed_form_values():
    g = PillarGeometry(200e-9, R_mem=500e-9)
    z0 = g.R_mem
    assert field_on_top(0.0, z0, g, E_M) == E_M
    assert potential_on_top(0.0, z0, g, E_M) == pytest.approx(100e-9 / J0_ZERO * E_M, rel=1e-15)
    for z in (z0, z0 + 30e-9, z0 + 300e-9):
        assert abs(potential_on_top(100e-9, z, g, E_M)) < 1e-15 * E_M * 1e-7
        assert abs(field_on_top(100e-9, z, g, E_M)) < 1e-14 * E_M
    ratio = potential_on_top(0.0, z0 + g.decay_length, g, E_M) / potential_on_top(0.0, z0, g, E_M)
    assert ratio == pytest.approx(math.exp(-1), rel=1e-14)
    assert g.decay_length == pytest.approx(41.58e-9, rel=1e-3)
    E5 = field_on_top(0.0, z0 + 5e-9, g, E_M)
    assert E5 == pytest.approx(E_M * math.exp(-0.05 * J0_ZERO), rel=1e-14)
    assert E5 == pytest.approx(3.8e7, rel=0.15)


def test_field_is_minus_gradient_of_potential():
    g = PillarGeometry(200e-9)
    z = np.linspace(10e-9, 150e-9, 15)
    h = 1e-12
    dV = (potential_on_top(0.0, z + h, g, E_M) - potential_on_top(0.0, z - h, g, E_M)) / (2 * h)
    assert np.allclose(-dV, field_on_top(0.0, z, g, E_M), rtol=1e-6)


def test_closed_form_rejects_outside_points(geom):
    with pytest.raises(ValueError):
        field_on_top(0.2e-6, 0.0, geom, E_M)
    with pytest.raises(ValueError):
        potential_on_top(0.0, -1e-9, geom, E_M)


def test_decay_constant_fit(geom):
    depth = np.linspace(0, geom.decay_length, 50)
    k = fit_decay_constant(depth, field_on_top(0.0, depth, geom, E_M))
    assert k == pytest.approx(2 * J0_ZERO / geom.diameter, rel=1e-12)
    assert k == pytest.approx(4.8 / geom.diameter, rel=0.01)


def test_on_top_numeric_matches_closed_form(geom, on_top_grid):
    s = np.linspace(0, geom.diameter, 41)
    num = line_profile(geom, E_M, s, on_top_grid)
    ana = line_profile(geom, E_M, s)
    assert np.max(np.abs(num / ana - 1)) <= 0.02


def test_on_side_reference_value(geom, on_side_grid):
    E = line_profile(PillarGeometry(200e-9, contact=ON_SIDE), E_M, np.array([100e-9]),
                     on_side_grid)[0]
    assert E == pytest.approx(1.02e7, rel=0.25)


def test_on_side_exceeds_on_top(geom, on_side_grid):
    s = np.linspace(5e-9, 150e-9, 30)
    side = line_profile(PillarGeometry(200e-9, contact=ON_SIDE), E_M, s, on_side_grid)
    top = line_profile(geom, E_M, s)
    assert np.all(side > top)


def test_on_side_linearity(geom, on_side_grid):
    double = solve_pillar(geom, 2 * E_M, CI_SPACING, ON_SIDE)
    assert np.array_equal(double.V, 2 * on_side_grid.V)
    assert np.array_equal(double.E_r, 2 * on_side_grid.E_r)


def test_zero_drive_gives_zero_field(geom):
    g = solve_pillar(geom, 0.0, 10e-9, ON_SIDE)
    assert np.all(g.V == 0)


def test_grid_node_identity(on_side_grid):
    g = on_side_grid
    for i, j, k in ((3, 5, -4), (10, 0, -20), (15, 33, -1)):
        x, y = g.r[i] * math.cos(g.theta[j]), g.r[i] * math.sin(g.theta[j])
        out = g.sample(x, y, g.z[k])
        assert out["V"][0] == pytest.approx(g.V[i, j, k], rel=1e-12, abs=1e-300)
    with pytest.raises(ValueError):
        g.sample(1e-6, 0.0, g.z[-1])


def test_field_at_nv(geom):
    g = PillarGeometry(200e-9, R_mem=500e-9)
    assert field_at_nv(g, E_M) == field_on_top(0.0, g.R_mem + 5e-9, g, E_M)
    surface = PillarGeometry(200e-9, nv_depth=0.0, R_mem=500e-9)
    assert field_at_nv(surface, E_M) == E_M
    with pytest.raises(ValueError):
        field_at_nv(PillarGeometry(200e-9, contact=ON_SIDE), E_M)


def test_budget(geom):
    with pytest.raises(ConfigError):
        solve_pillar(geom, E_M, 1e-9, ON_SIDE, node_budget=1000)


# ---------------------------------------------------------------------------
# detectability

def test_magnetic_undetectable():
    spec = SensorSpec(2.8e6, 1.26e-6, collection_gain=5.0)
    rep = assess_detectability(0.95e-9, spec, "magnetic")
    assert not rep.detectable
    assert rep.margin == pytest.approx(1.7e-3, rel=0.02)
    assert 1.26e-6 / rep.effective_threshold == pytest.approx(math.sqrt(5), rel=1e-15)
    assert math.sqrt(5) == pytest.approx(2.24, abs=0.005)


def test_electric_detectable():
    rep = assess_detectability(3.8e7, SensorSpec(2.8e6, 1.26e-6), "electric")
    assert rep.detectable and rep.margin == pytest.approx(13.6, rel=1e-2)
    rep5 = assess_detectability(3.8e7, SensorSpec(2.8e6, 1.26e-6, collection_gain=5), "electric")
    assert rep5.margin > rep.margin


def test_threshold_boundary_and_monotone():
    spec = SensorSpec(2.8e6, 1.26e-6, collection_gain=4.0)
    rep = assess_detectability(1.4e6, spec, "electric")
    assert rep.detectable and rep.margin == 1.0
    fields = np.geomspace(1e3, 1e9, 400)
    flags = [assess_detectability(f, spec, "electric").detectable for f in fields]
    assert all(b >= a for a, b in zip(flags, flags[1:]))
    with pytest.raises(ValueError):
        assess_detectability(1.0, spec, "gravity")
    with pytest.raises(ValueError):
        SensorSpec(2.8e6, 1.26e-6, collection_gain=0.5)


def test_csv_exports(tmp_path, on_side_grid):
    s = np.linspace(0, 1e-7, 5)
    d = read_csv(write_line_csv(tmp_path / "l.csv", s, 2 * s))
    assert list(d) == ["s_m", "E_Vpm"]
    g = read_csv(write_grid_csv(tmp_path / "g.csv", on_side_grid))
    assert list(g) == ["x_m", "y_m", "z_m", "V_V", "Emag_Vpm"]
    assert g["V_V"].size == on_side_grid.n_cells
