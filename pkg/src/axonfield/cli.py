"""Command line entry point: ``axonfield {hh,pnp,pillar,growth,all}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure,
4 solver non-convergence.  Every run that gets past argument parsing writes
``run_report.json`` into the output directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import re
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__, _kernels
from .errors import ConfigError, ConvergenceError, InputError, NumericalError
from .growth import axes_from_angle, growth_report, read_paths_csv, write_growth_csv
from .hh import (AP_DETECT_MV, build_membrane_wave, integrate_hh, membrane_E_profile,
                 resting_wave, write_timeseries_csv, write_wave_csv)
from .io import sha256_file, write_csv
from .magnetics import (enclosed_current_loop, fit_inverse_r, magnetic_field,
                        write_bphi_csv)
from .mesh import build_mesh
from .params import ModelConfig, load_config
from .pillar import (ON_SIDE, ON_TOP, PillarGeometry, SensorSpec, assess_detectability,
                     field_at_nv, line_profile, solve_pillar, write_grid_csv, write_line_csv)
from .pnp import (conservation_balance, derived_fields, radial_profile, solve_pnp,
                  write_field_csv)

logger = logging.getLogger("axonfield")

SCHEMA_VERSION = "1.0"
REPORT_NAME = "run_report.json"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CONVERGENCE = 0, 2, 3, 4

CI_AXIAL_SPACING = 4e-6
CI_PILLAR_SPACING = 5e-9
FIT_OUTER_RADIUS = 1.5e-6
LINE_SAMPLES = 201


def report_schema() -> dict:
    text = resources.files("axonfield").joinpath("report_schema.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# run bookkeeping

@dataclasses.dataclass
class RunManifest:
    subcommand: str
    output_dir: Path
    config: dict
    timings: dict[str, float] = dataclasses.field(default_factory=dict)
    artifacts: list[Path] = dataclasses.field(default_factory=list)

    def add(self, path: Path) -> Path:
        self.artifacts.append(Path(path))
        return path

    def as_dict(self) -> dict:
        arts = []
        for p in self.artifacts:
            arts.append({"path": p.relative_to(self.output_dir).as_posix(),
                         "sha256": sha256_file(p), "bytes": p.stat().st_size})
        return {"output_dir": str(self.output_dir), "config": self.config,
                "timings_s": dict(self.timings), "artifacts": arts}


def verify_manifest(report: dict) -> list[str]:
    """Artifacts that are missing or whose hash no longer matches."""
    root = Path(report["manifest"]["output_dir"])
    bad = []
    for a in report["manifest"]["artifacts"]:
        p = root / a["path"]
        if not p.is_file() or sha256_file(p) != a["sha256"]:
            bad.append(a["path"])
    return bad


class _Stage:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        logger.info("stage %s", self.name)

    def __exit__(self, *exc):
        self.manifest.timings[self.name] = time.perf_counter() - self.t0
        return False


def _jsonable(obj: Any):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.name != "raw"}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


# ---------------------------------------------------------------------------
# stages

def _count_aps(V: np.ndarray) -> int:
    above = V * 1e3 > AP_DETECT_MV
    return int(np.count_nonzero(above[1:] & ~above[:-1]) + int(above[0]))


def stage_hh(config: ModelConfig, out: Path, manifest: RunManifest, results: dict):
    with _Stage(manifest, "hh"):
        series = integrate_hh(config.hh)
        wave = build_membrane_wave(config, series)
        manifest.add(write_timeseries_csv(series, out / "hh_timeseries.csv"))
        manifest.add(write_wave_csv(wave, out / "membrane_wave.csv"))
        k = int(np.argmax(series.V))
        results["hh"] = {"V_max_V": float(series.V[k]), "t_peak_s": float(series.t[k]),
                         "n_action_potentials": _count_aps(series.V),
                         "wave_samples": int(wave.xi.size)}
    return wave


def _pnp_metrics(config: ModelConfig, sol, der, wave) -> dict:
    xi = sol.mesh.xi
    E_mem = der.E_r[:, 0]
    rho_mem = der.rho[:, 0]
    jx = int(np.unravel_index(np.argmax(np.abs(der.J_xi)), der.J_xi.shape)[0])
    ji = int(np.argmax(np.abs(der.J_xi[jx])))
    return {
        "E_r_membrane_max_Vpm": float(E_mem.max()),
        "E_r_membrane_min_Vpm": float(E_mem.min()),
        "xi_E_r_max_m": float(xi[np.argmax(E_mem)]),
        "E_r_rest_Vpm": float(resting_wave(config, xi[:1]).E_m[0]),
        "rho_membrane_min_Cm3": float(rho_mem.min()),
        "rho_membrane_max_Cm3": float(rho_mem.max()),
        "xi_rho_min_m": float(xi[np.argmin(rho_mem)]),
        "xi_rho_max_m": float(xi[np.argmax(rho_mem)]),
        "J_xi_peak_Apm2": float(der.J_xi[jx, ji]),
        "J_xi_peak_abs_Apm2": float(abs(der.J_xi[jx, ji])),
        "xi_J_xi_peak_m": float(xi[jx]),
        "r_J_xi_peak_m": float(sol.mesh.r[ji]),
        "B_m_at_J_xi_peak_T": float(wave.B_m[jx]),
    }


def stage_pnp(config: ModelConfig, wave, out: Path, manifest: RunManifest, results: dict,
              profiles: list[float]):
    with _Stage(manifest, "pnp"):
        mesh = build_mesh(config.geometry, config.solver)
        res: dict = {"mesh": mesh.stats(), "converged": False, "iterations": 0,
                     "residual": float("nan"), "residual_history": [], "method": ""}
        results["pnp"] = res
        try:
            sol = solve_pnp(mesh, config.electrolyte, wave, config.solver.tol,
                            constants=config.constants, settings=config.solver)
        except ConvergenceError as exc:
            s = exc.solution
            res.update(iterations=int(exc.diagnostics.get("iterations", 0)),
                       residual=float(s.residual_norm) if s is not None else float("nan"),
                       residual_history=[float(v) for v in exc.diagnostics.get(
                           "residual_history", [])],
                       method=s.method if s is not None else "",
                       worst_node=exc.diagnostics.get("worst_node", {}))
            raise
        res.update(converged=True, iterations=sol.iterations, residual=sol.residual_norm,
                   residual_history=[float(v) for v in sol.residual_history],
                   method=sol.method)
        der = derived_fields(sol)
        res["metrics"] = _pnp_metrics(config, sol, der, sol.wave)
        res["conservation"] = conservation_balance(sol)
        manifest.add(write_field_csv(sol, der, out / "field.csv"))
    with _Stage(manifest, "magnetics"):
        mag = magnetic_field(mesh, der.J_xi, sol.wave, config.constants.mu0)
        manifest.add(write_bphi_csv(mag, out / "bphi.csv"))
        j = int(np.argmax(np.abs(mag.B_phi[:, 0])))
        fit = fit_inverse_r(mesh.r, mag.B_phi[j], (mesh.r[0], FIT_OUTER_RADIUS))
        loop = config.constants.mu0 * enclosed_current_loop(mesh.r, der.J_xi) / mesh.r
        scale = np.abs(mag.B_phi).max() or 1.0
        results["magnetics"] = {
            "B_peak_T": float(mag.B_phi[j, 0]), "xi_peak_m": float(mesh.xi[j]),
            "fit": dataclasses.asdict(fit),
            "ampere_max_rel_diff": float(np.abs(loop - mag.current_term).max() / scale),
        }
    if profiles:
        used = []
        for xi in profiles:
            r, _, xi_used = radial_profile(sol, sol.V, xi)
            j = int(np.argmin(np.abs(mesh.xi - xi_used)))
            cols = [r, sol.V[j], sol.c_pos[j], sol.c_neg[j], der.rho[j], der.E_r[j],
                    der.E_xi[j], der.J_r[j], der.J_xi[j], mag.B_phi[j]]
            name = f"radial_profile_xi_{_fmt_um(xi)}um.csv"
            manifest.add(write_csv(out / name, ["r_m", "V_V", "cpos_molm3", "cneg_molm3",
                                                "rho_Cm3", "Er_Vpm", "Exi_Vpm", "Jr_Apm2",
                                                "Jxi_Apm2", "Bphi_T"], cols))
            used.append(xi_used)
        res["profiles_xi_m"] = used
    return sol, mag


def _fmt_um(xi: float) -> str:
    return f"{xi * 1e6:g}".replace("-", "m").replace(".", "p")


def membrane_field_in_diamond(config: ModelConfig, wave) -> float:
    """Peak membrane field with the diamond permittivity substituted (V/m)."""
    eps = config.pillar.eps_diamond * config.constants.eps0
    E = membrane_E_profile(wave, config.bc, config.hh, config.geometry, eps)
    return float(np.abs(E).max())


def stage_pillar(config: ModelConfig, wave, out: Path, manifest: RunManifest, results: dict,
                 mode: str):
    with _Stage(manifest, "pillar"):
        ps = config.pillar
        E_m = membrane_field_in_diamond(config, wave) if ps.E_m_from_membrane else ps.E_m
        geom = PillarGeometry.from_settings(ps, config.geometry.axon_radius, contact=mode)
        s = np.linspace(0.0, geom.diameter, LINE_SAMPLES)
        grid_info = None
        if mode == ON_TOP:
            E_nv = field_at_nv(geom, E_m)
            E_line = line_profile(geom, E_m, s)
        else:
            grid = solve_pillar(geom, E_m, ps.grid_spacing)
            E_nv = field_at_nv(geom, source=grid)
            E_line = line_profile(geom, E_m, s, source=grid)
            manifest.add(write_grid_csv(out / f"pillar_grid_{mode}.csv", grid))
            grid_info = {"shape": list(grid.V.shape), "spacing_m": ps.grid_spacing,
                         "iterations": grid.iterations, "residual": grid.residual}
        manifest.add(write_line_csv(out / f"pillar_line_{mode}.csv", s, E_line))
        spec = SensorSpec.from_settings(config.sensor)
        B_peak = float(np.abs(wave.B_m).max())
        verdicts = [assess_detectability(E_nv, spec, "electric").as_dict(),
                    assess_detectability(B_peak, spec, "magnetic").as_dict()]
        results["pillar"] = {"mode": mode, "E_m_Vpm": E_m, "field_at_nv_Vpm": E_nv,
                             "grid": grid_info, "verdicts": verdicts}


def stage_growth(config: ModelConfig, paths_csv: Path, out: Path, manifest: RunManifest,
                 results: dict):
    with _Stage(manifest, "growth"):
        ids, polys = read_paths_csv(paths_csv)
        rep = growth_report(polys, config.growth.threshold,
                            axes_from_angle(config.growth.axis_angle))
        manifest.add(write_growth_csv(out / "growth_paths.csv", ids, rep))
        results["growth"] = rep.as_dict()


# ---------------------------------------------------------------------------
# argument handling

def _parse_profile(text: str) -> float:
    m = re.fullmatch(r"\s*xi\s*=\s*([-+0-9.eE]+)\s*(um|nm|mm|m)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected xi=VALUE[unit], got {text!r}")
    try:
        value = float(m.group(1))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from None
    unit = {"um": 1e-6, "nm": 1e-9, "mm": 1e-3, "m": 1.0}[m.group(2) or "um"]
    return value * unit


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file "
                        "(default: $AXONFIELD_CONFIG, else built-in defaults)")
    common.add_argument("--out", type=Path, default=Path("results"),
                        help="output directory (default: ./results)")
    common.add_argument("--ci", action="store_true",
                        help="reduced resolution for quick checks")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="axonfield", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("hh", parents=[common], help="membrane action potential and wave")
    for name, helptext in (("pnp", "external field solve and magnetics"),
                           ("all", "full pipeline")):
        sp_ = sub.add_parser(name, parents=[common], help=helptext)
        sp_.add_argument("--profile", action="append", type=_parse_profile, default=[],
                         metavar="xi=VALUE", help="write the radial profile nearest to "
                         "this xi (micrometres unless a unit is given); repeatable")
        if name == "all":
            sp_.add_argument("--mode", choices=[ON_TOP, ON_SIDE])
            sp_.add_argument("--paths", type=Path, help="polyline CSV for the growth stage")
    sp_ = sub.add_parser("pillar", parents=[common], help="pillar field and detectability")
    sp_.add_argument("--mode", choices=[ON_TOP, ON_SIDE])
    sp_ = sub.add_parser("growth", parents=[common], help="neurite ordering metric")
    sp_.add_argument("paths", type=Path, help="CSV with columns path_id,x_um,y_um")
    return p


def apply_ci(config: ModelConfig) -> ModelConfig:
    return dataclasses.replace(
        config,
        solver=dataclasses.replace(config.solver, axial_spacing=CI_AXIAL_SPACING),
        pillar=dataclasses.replace(config.pillar, grid_spacing=CI_PILLAR_SPACING))


def _write_report(out: Path, command: str, manifest: RunManifest | None, results: dict,
                  status: str, code: int, message: str | None) -> dict:
    report = {
        "schema_version": SCHEMA_VERSION, "package_version": __version__,
        "subcommand": command, "status": status, "exit_code": code, "message": message,
        "backend": _kernels.backend(),
        "manifest": manifest.as_dict() if manifest else {
            "output_dir": str(out), "config": {}, "timings_s": {}, "artifacts": []},
        "results": _jsonable(results),
    }
    jsonschema.validate(report, report_schema())
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_NAME).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def run(args: argparse.Namespace) -> int:
    out: Path = args.out
    results: dict = {}
    manifest = None
    try:
        config = load_config(args.config)
        if args.ci:
            config = apply_ci(config)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, out, _jsonable(config))
        cmd = args.command
        mode = getattr(args, "mode", None) or config.pillar.contact
        if cmd == "growth":
            stage_growth(config, args.paths, out, manifest, results)
        else:
            wave = stage_hh(config, out, manifest, results)
            if cmd in ("pnp", "all"):
                stage_pnp(config, wave, out, manifest, results, args.profile)
            if cmd in ("pillar", "all"):
                stage_pillar(config, wave, out, manifest, results, mode)
            if cmd == "all" and args.paths is not None:
                stage_growth(config, args.paths, out, manifest, results)
    except (ConfigError, InputError, ValueError, OSError) as exc:
        return _fail(out, args.command, manifest, results, "config_error", EXIT_CONFIG, exc)
    except (NumericalError, FloatingPointError) as exc:
        return _fail(out, args.command, manifest, results, "numerical_error", EXIT_NUMERIC, exc)
    except ConvergenceError as exc:
        return _fail(out, args.command, manifest, results, "not_converged",
                     EXIT_CONVERGENCE, exc)
    _write_report(out, args.command, manifest, results, "ok", EXIT_OK, None)
    logger.info("wrote %d files to %s", len(manifest.artifacts), out)
    return EXIT_OK


def _fail(out, command, manifest, results, status, code, exc) -> int:
    msg = f"{type(exc).__name__}: {exc}"
    print(f"axonfield: error: {msg}", file=sys.stderr)
    try:
        _write_report(out, command, manifest, results, status, code, msg)
    except OSError:
        pass
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
