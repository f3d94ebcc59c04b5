"""Compare the numba kernels with their pure-numpy/python counterparts.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N]

Timings exclude the first (compiling) call.  Outputs of both paths are
checked for agreement before timing.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from axonfield import _kernels
from axonfield.params import default_config


def _hh_case(n_steps: int):
    p = default_config().hh
    from axonfield.hh import steady_gating
    g = steady_gating(p.V_rest * 1e3)
    y0 = np.array([p.V_rest, g.m, g.h, g.n])
    stim = np.zeros(n_steps)
    stim[2000:4000] = -p.stimulus.amplitude
    params = (p.g_Na, p.g_NaL, p.g_K, p.g_KL, p.V_Na, p.V_K, p.C_m, p.phi * 1e3, 0.0)
    return y0, stim, 0.5e-6, params


def _sg_case(n_edges: int):
    rng = np.random.default_rng(0)
    return (rng.uniform(0.1, 2.0, n_edges), 1.0, rng.normal(0, 3, n_edges),
            rng.normal(0, 3, n_edges), rng.normal(0, 0.5, n_edges), rng.normal(0, 0.5, n_edges))


def _time(fn, args, repeat: int) -> float:
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--hh-steps", type=int, default=40_000)
    ap.add_argument("--edges", type=int, default=1_000_000)
    args = ap.parse_args()
    if not _kernels._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    hh = _hh_case(args.hh_steps)
    a, _ = _kernels.hh_rk4_jit(*hh)
    b, _ = _kernels.hh_rk4_py(*hh)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)
    sg = _sg_case(args.edges)
    for x, y in zip(_kernels.sg_edges_jit(*sg), _kernels.sg_edges_np(*sg)):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-300)

    rows = [
        (f"HH RK4, {args.hh_steps} steps", _time(_kernels.hh_rk4_jit, hh, args.repeat),
         _time(_kernels.hh_rk4_py, hh, args.repeat)),
        (f"SG edge fluxes, {args.edges} edges", _time(_kernels.sg_edges_jit, sg, args.repeat),
         _time(_kernels.sg_edges_np, sg, args.repeat)),
    ]
    print(f"{'kernel':<34}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name, tj, tn in rows:
        print(f"{name:<34}{tj:>12.4f}{tn:>12.4f}{tn / tj:>10.1f}")


if __name__ == "__main__":
    main()
