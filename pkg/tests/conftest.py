"""Shared fixtures.  The expensive solves are computed once per session."""
from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from axonfield import cli                                      # noqa: E402
from axonfield.hh import build_membrane_wave, integrate_hh, resting_wave  # noqa: E402
from axonfield.magnetics import magnetic_field                 # noqa: E402
from axonfield.mesh import build_mesh                          # noqa: E402
from axonfield.params import default_config                    # noqa: E402
from axonfield.pnp import derived_fields, solve_pnp            # noqa: E402


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def ci_config(config):
    return cli.apply_ci(config)


@pytest.fixture(scope="session")
def series(config):
    return integrate_hh(config.hh)


@pytest.fixture(scope="session")
def wave(config, series):
    return build_membrane_wave(config, series)


class Run:
    """A converged field solve with its derived quantities."""

    def __init__(self, config, wave, xi_range=None):
        t0 = time.perf_counter()
        self.mesh = build_mesh(config.geometry, config.solver, xi_range)
        self.sol = solve_pnp(self.mesh, config.electrolyte, wave, config.solver.tol,
                             constants=config.constants, settings=config.solver)
        self.der = derived_fields(self.sol)
        self.mag = magnetic_field(self.mesh, self.der.J_xi, self.sol.wave,
                                  config.constants.mu0)
        self.seconds = time.perf_counter() - t0


@pytest.fixture(scope="session")
def ap_run(ci_config, wave):
    """Action-potential solve on the CI mesh (2 mm window at 4 um)."""
    return Run(ci_config, wave)


@pytest.fixture(scope="session")
def rest_run(ci_config):
    """Equilibrium solve driven by the resting membrane profile."""
    xi = np.linspace(-20e-6, 20e-6, 41)
    return Run(ci_config, resting_wave(ci_config, xi), xi_range=(-8e-6, 8e-6))
