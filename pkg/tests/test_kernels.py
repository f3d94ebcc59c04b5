"""The compiled and pure-numpy kernel paths must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from axonfield import _kernels

needs_numba = pytest.mark.skipif(not _kernels._HAVE_NUMBA, reason="numba unavailable")


def test_bernoulli_values():
    x = np.array([-50.0, -1.0, -1e-8, 0.0, 1e-8, 1.0, 50.0, 800.0])
    ref = np.array([-50 / np.expm1(-50), -1 / np.expm1(-1), 1 + 0.5e-8, 1.0, 1 - 0.5e-8,
                    1 / np.expm1(1), 50 / np.expm1(50), 0.0])
    got = _kernels.bernoulli_np(x)
    assert np.allclose(got, ref, rtol=1e-14, atol=1e-300)
    assert np.all(np.isfinite(_kernels.dbernoulli_np(x)))


def test_bernoulli_derivative_fd():
    x = np.array([-3.0, -0.5, 1e-7, 0.2, 4.0])
    h = 1e-6
    fd = (_kernels.bernoulli_np(x + h) - _kernels.bernoulli_np(x - h)) / (2 * h)
    assert np.allclose(_kernels.dbernoulli_np(x), fd, rtol=1e-6, atol=1e-8)


def _edges(rng, n=500):
    return (rng.uniform(0.1, 2.0, n), rng.normal(0, 3, n), rng.normal(0, 3, n),
            rng.normal(0, 0.5, n), rng.normal(0, 0.5, n))


@needs_numba
@pytest.mark.parametrize("z", [1.0, -1.0])
def test_sg_jit_matches_numpy(z):
    k, up, uq, dp, dq = _edges(np.random.default_rng(1))
    a = _kernels.sg_edges_jit(k, z, up, uq, dp, dq)
    b = _kernels.sg_edges_np(k, z, up, uq, dp, dq)
    c = _kernels.sg_edges_loop_py(k, z, up, uq, dp, dq)
    for x, y, w in zip(a, b, c):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-300)
        assert np.allclose(w, y, rtol=1e-12, atol=1e-300)


@needs_numba
def test_rk4_jit_matches_python(config):
    from axonfield.hh import steady_gating
    p = config.hh
    g = steady_gating(p.V_rest * 1e3)
    y0 = np.array([p.V_rest, g.m, g.h, g.n])
    stim = np.zeros(4000)
    stim[2000:2200] = -p.stimulus.amplitude
    params = (p.g_Na, p.g_NaL, p.g_K, p.g_KL, p.V_Na, p.V_K, p.C_m, p.phi * 1e3, 0.0)
    a, fa = _kernels.hh_rk4_jit(y0, stim, 0.5e-6, params)
    b, fb = _kernels.hh_rk4_py(y0, stim, 0.5e-6, params)
    assert fa == fb == -1
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_rates_scalar_matches_vector():
    from axonfield.hh import rate_constants
    for v in (-90.0, -30.0, -34.0, 0.0, 40.0):
        assert np.allclose(_kernels.rates_py(v), rate_constants(v), rtol=1e-14)


def test_env_var_selects_numpy_backend():
    code = "from axonfield import _kernels; print(_kernels.backend())"
    env = dict(os.environ, AXONFIELD_NO_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_numpy_backend_reproduces_hh_run(config):
    from axonfield.hh import integrate_hh
    code = ("from axonfield.params import default_config; from axonfield.hh import integrate_hh;"
            "print(repr(float(integrate_hh(default_config().hh, 25e-3).V.max())))")
    env = dict(os.environ, AXONFIELD_NO_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    ref = float(integrate_hh(config.hh, 25e-3).V.max())
    assert float(out.stdout) == pytest.approx(ref, rel=1e-12)
