"""Physical constants, the parameter table and run configuration.

Everything is stored in SI units.  The configuration file uses the units
people actually write these numbers in (mmol/L, mS/cm^2, uF/cm^2, mV, nm,
um) and the loader converts on the way in; the unit is part of every key
name so there is no guessing.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import scipy.constants as sc

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

CONFIG_ENV_VAR = "AXONFIELD_CONFIG"


class ConfigError(ValueError):
    """Bad configuration: unreadable file, bad syntax or a violated invariant."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class PhysicalConstants:
    e: float = sc.e
    k_b: float = sc.k
    N_A: float = sc.N_A
    mu0: float = sc.mu_0
    eps0: float = sc.epsilon_0

    @property
    def F(self) -> float:
        return self.e * self.N_A

    @property
    def R_gas(self) -> float:
        return self.k_b * self.N_A

    def validate(self) -> None:
        for name in ("e", "k_b", "N_A", "mu0", "eps0"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be strictly positive", f"constants.{name}")


@dataclass(frozen=True)
class IonSpecies:
    name: str
    valence: int
    diffusion: float       # m^2/s
    conc_internal: float   # mol/m^3
    conc_external: float   # mol/m^3

    def validate(self) -> None:
        key = f"species.{self.name}"
        if not self.diffusion > 0:
            raise ConfigError("diffusion coefficient must be > 0", key + ".D_m2_per_s")
        if self.conc_internal < 0 or self.conc_external < 0:
            raise ConfigError("concentrations must be >= 0", key)
        if abs(self.valence) != 1:
            raise ConfigError("only monovalent species are modelled", key + ".valence")


@dataclass(frozen=True)
class LumpedSpecies:
    """One of the two grouped carriers used by the field solver."""

    valence: int
    conc_bulk: float   # mol/m^3, external bulk value
    diffusion: float   # m^2/s


@dataclass(frozen=True)
class ElectrolyteModel:
    species: tuple[IonSpecies, ...]
    temperature: float   # K
    permittivity: float  # absolute, F/m

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ConfigError("must be > 0", "electrolyte.temperature_K")
        if not self.permittivity > 0:
            raise ConfigError("must be > 0", "electrolyte.eps_r_water")
        for s in self.species:
            s.validate()
        net = sum(s.valence * s.conc_external for s in self.species)
        scale = sum(abs(s.conc_external) for s in self.species) or 1.0
        if abs(net) > 1e-9 * scale:
            raise ConfigError(
                f"external bulk must be charge neutral (sum z*c = {net:g} mol/m^3)",
                "species")

    def _group(self, sign: int) -> LumpedSpecies:
        members = [s for s in self.species if s.valence * sign > 0]
        if not members:
            raise ConfigError(f"no species with valence sign {sign:+d}", "species")
        conc = sum(s.conc_external for s in members)
        diff = sum(s.diffusion for s in members) / len(members)
        return LumpedSpecies(valence=sign, conc_bulk=conc, diffusion=diff)

    @property
    def lumped_pos(self) -> LumpedSpecies:
        return self._group(+1)

    @property
    def lumped_neg(self) -> LumpedSpecies:
        return self._group(-1)

    def get(self, name: str) -> IonSpecies:
        for s in self.species:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True)
class GeometryParams:
    axon_radius: float    # m
    axial_length: float   # m
    outer_radius: float   # m
    debye_band: float     # m

    def validate(self) -> None:
        if not self.axon_radius > 0:
            raise ConfigError("must be > 0", "geometry.axon_radius_nm")
        if not self.debye_band > 0:
            raise ConfigError("must be > 0", "geometry.debye_band_nm")
        if not self.debye_band < self.axon_radius:
            raise ConfigError("must be smaller than the axon radius", "geometry.debye_band_nm")
        if not self.outer_radius > self.axon_radius:
            raise ConfigError("must exceed the axon radius", "geometry.outer_radius_um")
        if not self.axial_length > 0:
            raise ConfigError("must be > 0", "geometry.axial_length_um")


@dataclass(frozen=True)
class Stimulus:
    amplitude: float   # A/m^2, depolarising when positive
    onset: float       # s
    duration: float    # s

    def current(self, t: float) -> float:
        """Injected stimulus I_int(t) in the sign convention of the membrane
        equation ``C dV/dt + I_int + I_ion = 0`` (negative = depolarising)."""
        if self.onset <= t < self.onset + self.duration:
            return -self.amplitude
        return 0.0


@dataclass(frozen=True)
class HHParams:
    g_Na: float
    g_NaL: float
    g_K: float
    g_KL: float
    phi: float        # 1/ms, multiplies the gating rates
    C_m: float        # F/m^2
    V_rest: float     # V
    V_Na: float       # V
    V_K: float        # V
    stimulus: Stimulus
    velocity: float   # m/s
    balance_rest: bool = True
    t_end: float = 80e-3
    dt: float = 0.5e-6
    wave_spacing: float = 1e-6

    def validate(self) -> None:
        for name in ("g_Na", "g_NaL", "g_K", "g_KL"):
            if getattr(self, name) < 0:
                raise ConfigError("conductance must be >= 0", f"hh.{name}_mS_per_cm2")
        if not self.C_m > 0:
            raise ConfigError("must be > 0", "hh.C_m_uF_per_cm2")
        if not self.phi > 0:
            raise ConfigError("must be > 0", "hh.phi_per_ms")
        if not self.velocity > 0:
            raise ConfigError("must be > 0", "hh.velocity_m_per_s")
        if not self.dt > 0:
            raise ConfigError("must be > 0", "hh.dt_us")
        if not self.t_end > self.dt:
            raise ConfigError("must exceed the time step", "hh.t_end_ms")
        if not self.wave_spacing > 0:
            raise ConfigError("must be > 0", "hh.wave_spacing_um")


@dataclass(frozen=True)
class MembraneBCParams:
    gamma: float
    eta: float
    q_i0: float       # C/m
    sigma_i0: float   # S/m

    def validate(self) -> None:
        if not self.gamma > 0:
            raise ConfigError("must be > 0", "bc.gamma")
        if not self.eta > 0:
            raise ConfigError("must be > 0", "bc.eta")
        if not self.sigma_i0 > 0:
            raise ConfigError("internal conductivity must be > 0", "species")
        if not math.isfinite(self.q_i0):
            raise ConfigError("must be finite", "bc.q_i0_C_per_m")


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 500
    fine_spacing: float = 0.2e-9     # m, radial spacing inside the Debye band
    growth_factor: float = 1.3
    axial_spacing: float = 2e-6      # m
    window: float = 2e-3             # m, axial extent of the field solve
    window_center: float = -0.5e-3   # m, relative to the AP peak
    node_budget: int = 400_000
    stall_sweeps: int = 10
    anderson_depth: int = 5
    gummel_sweeps: int = 8

    def validate(self) -> None:
        if not self.tol > 0:
            raise ConfigError("must be > 0", "solver.tol")
        if self.max_iter < 1:
            raise ConfigError("must be >= 1", "solver.max_iter")
        if not 1.0 < self.growth_factor <= 1.3:
            raise ConfigError("must lie in (1, 1.3]", "solver.growth_factor")
        if not 0 < self.fine_spacing <= 0.2e-9 * (1 + 1e-9):
            raise ConfigError("must lie in (0, 0.2] nm", "solver.fine_spacing_nm")
        if not self.axial_spacing > 0:
            raise ConfigError("must be > 0", "solver.axial_spacing_um")
        if not self.window > 0:
            raise ConfigError("must be > 0", "solver.window_um")


@dataclass(frozen=True)
class PillarSettings:
    diameter: float = 200e-9
    height: float = 1e-6
    contact: str = "on-top"
    nv_depth: float = 5e-9
    eps_diamond: float = 6.0
    E_m: float = 4.54e7              # V/m  (4.54e10 mV/m)
    E_m_from_membrane: bool = False
    grid_spacing: float = 2.5e-9

    def validate(self) -> None:
        if not self.diameter > 0:
            raise ConfigError("must be > 0", "pillar.diameter_nm")
        if not self.height > 0:
            raise ConfigError("must be > 0", "pillar.height_nm")
        if not self.nv_depth >= 0:
            raise ConfigError("must be >= 0", "pillar.nv_depth_nm")
        if self.contact not in ("on-top", "on-side"):
            raise ConfigError("must be 'on-top' or 'on-side'", "pillar.contact")
        if not self.eps_diamond > 0:
            raise ConfigError("must be > 0", "pillar.eps_diamond")
        if not self.grid_spacing > 0:
            raise ConfigError("must be > 0", "pillar.grid_spacing_nm")


@dataclass(frozen=True)
class SensorSettings:
    e_threshold: float = 2.8e6       # V/m  (2.8e9 mV/m)
    b_threshold: float = 1.26e-6     # T
    integration_time: float = 1e-3   # s
    collection_gain: float = 5.0
    sensitivity_exponent: float = 0.5

    def validate(self) -> None:
        if not (self.e_threshold > 0 and self.b_threshold > 0):
            raise ConfigError("thresholds must be > 0", "sensor")
        if not self.collection_gain >= 1:
            raise ConfigError("must be >= 1", "sensor.collection_gain")


@dataclass(frozen=True)
class GrowthSettings:
    threshold: float = math.pi / 36
    axis_angle: float = 0.0          # rad, orientation of the first grid axis


@dataclass(frozen=True)
class ModelConfig:
    constants: PhysicalConstants
    electrolyte: ElectrolyteModel
    geometry: GeometryParams
    hh: HHParams
    bc: MembraneBCParams
    solver: SolverSettings = field(default_factory=SolverSettings)
    pillar: PillarSettings = field(default_factory=PillarSettings)
    sensor: SensorSettings = field(default_factory=SensorSettings)
    growth: GrowthSettings = field(default_factory=GrowthSettings)
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def validate(self) -> None:
        self.constants.validate()
        self.electrolyte.validate()
        self.geometry.validate()
        self.hh.validate()
        self.bc.validate()
        self.solver.validate()
        self.pillar.validate()
        self.sensor.validate()

    def with_hh(self, **changes) -> "ModelConfig":
        return replace(self, hh=replace(self.hh, **changes))


# ---------------------------------------------------------------------------
# derived quantities

def nernst_potential(species: IonSpecies, T: float,
                     constants: PhysicalConstants | None = None) -> float:
    """Equilibrium potential (V) of one species, inside relative to outside."""
    c = constants or PhysicalConstants()
    if species.valence == 0:
        raise ValueError(f"{species.name}: zero valence has no Nernst potential")
    if species.conc_internal <= 0 or species.conc_external <= 0:
        raise ValueError(f"{species.name}: concentrations must be positive")
    return (c.R_gas * T / (species.valence * c.F)
            * math.log(species.conc_external / species.conc_internal))


def mobility(species: IonSpecies, T: float,
             constants: PhysicalConstants | None = None) -> float:
    """Electrical mobility |z| e D / (k_b T) in m^2/(V s)."""
    c = constants or PhysicalConstants()
    if not T > 0:
        raise ValueError("temperature must be positive")
    return abs(species.valence) * c.e * species.diffusion / (c.k_b * T)


def internal_net_charge_density(electrolyte: ElectrolyteModel,
                                constants: PhysicalConstants) -> float:
    """Net internal ionic charge density F * sum(z c_in) in C/m^3."""
    return constants.F * sum(s.valence * s.conc_internal for s in electrolyte.species)


def resting_internal_charge(config: ModelConfig) -> float:
    """Capacitive membrane charge plus net bulk ionic charge, per unit length.

    ``2 pi R C_m V_rest + pi R^2 F sum(z_i c_i,in)`` in C/m.  This is the
    closed-form estimate; the configured ``bc.q_i0`` may come from another
    source (see :func:`load_config`).
    """
    R = config.geometry.axon_radius
    hh = config.hh
    bulk = internal_net_charge_density(config.electrolyte, config.constants)
    return 2 * math.pi * R * hh.C_m * hh.V_rest + math.pi * R**2 * bulk


def internal_conductivity(config: ModelConfig) -> float:
    """F^2/(R T) * sum(z^2 D c_in) in S/m."""
    c = config.constants
    T = config.electrolyte.temperature
    total = sum(s.valence**2 * s.diffusion * s.conc_internal
                for s in config.electrolyte.species)
    return c.F**2 / (c.R_gas * T) * total


def _internal_conductivity(electrolyte: ElectrolyteModel, c: PhysicalConstants) -> float:
    total = sum(s.valence**2 * s.diffusion * s.conc_internal for s in electrolyte.species)
    return c.F**2 / (c.R_gas * electrolyte.temperature) * total


def debye_length(config: ModelConfig) -> float:
    """Debye length of the lumped external electrolyte (m)."""
    c = config.constants
    el = config.electrolyte
    ionic = el.lumped_pos.conc_bulk + el.lumped_neg.conc_bulk
    return math.sqrt(el.permittivity * c.R_gas * el.temperature / (c.F**2 * ionic))


# ---------------------------------------------------------------------------
# loading

_TABLE_SPECIES = {
    # name: valence, D (m^2/s), c_in (mM), c_out (mM)
    "Na": (1, 1.334e-9, 12.0, 145.0),
    "K": (1, 1.957e-9, 155.0, 4.0),
    "Cl": (-1, 2.032e-9, 4.2, 123.0),
    "OA": (-1, 2.00e-9, 162.802, 26.0),
}

# section -> key -> (default, SI factor)
_SCHEMA: dict[str, dict[str, tuple[Any, float | None]]] = {
    "constants": {
        "e_C": (sc.e, 1.0),
        "k_b_J_per_K": (sc.k, 1.0),
        "N_A_per_mol": (sc.N_A, 1.0),
        "mu0_H_per_m": (sc.mu_0, 1.0),
        "eps0_F_per_m": (sc.epsilon_0, 1.0),
    },
    "electrolyte": {
        "temperature_K": (310.0, 1.0),
        "eps_r_water": (80.0, None),
    },
    "hh": {
        "g_Na_mS_per_cm2": (100.0, 10.0),
        "g_NaL_mS_per_cm2": (0.0175, 10.0),
        "g_K_mS_per_cm2": (40.0, 10.0),
        "g_KL_mS_per_cm2": (0.05, 10.0),
        "phi_per_ms": (3.0, 1.0),
        "C_m_uF_per_cm2": (1.0, 1e-2),
        "V_rest_mV": (-68.0, 1e-3),
        "V_Na_mV": (None, 1e-3),
        "V_K_mV": (None, 1e-3),
        "velocity_m_per_s": (0.7, 1.0),
        "stimulus_amplitude_uA_per_cm2": (30.0, 1e-2),
        "stimulus_onset_ms": (1.0, 1e-3),
        "stimulus_duration_ms": (1.0, 1e-3),
        "balance_resting_current": (True, None),
        "t_end_ms": (80.0, 1e-3),
        "dt_us": (0.5, 1e-6),
        "wave_spacing_um": (1.0, 1e-6),
    },
    "geometry": {
        "axon_radius_nm": (500.0, 1e-9),
        "axial_length_um": (2000.0, 1e-6),
        "outer_radius_um": (1.5, 1e-6),
        "debye_band_nm": (10.0, 1e-9),
    },
    "bc": {
        "gamma": (1.0, None),
        "eta": (1.0, None),
        "q_i0_source": ("resting_field", None),
        "q_i0_C_per_m": (None, 1.0),
        "resting_field_mV_per_m": (-1.4e8, 1e-3),
    },
    "solver": {
        "tol": (1e-8, None),
        "max_iter": (500, None),
        "fine_spacing_nm": (0.2, 1e-9),
        "growth_factor": (1.3, None),
        "axial_spacing_um": (2.0, 1e-6),
        "window_um": (None, 1e-6),
        "window_center_um": (-500.0, 1e-6),
        "node_budget": (400_000, None),
        "stall_sweeps": (10, None),
        "anderson_depth": (5, None),
        "gummel_sweeps": (8, None),
    },
    "pillar": {
        "diameter_nm": (200.0, 1e-9),
        "height_nm": (1000.0, 1e-9),
        "contact": ("on-top", None),
        "nv_depth_nm": (5.0, 1e-9),
        "eps_diamond": (6.0, None),
        "E_m_mV_per_m": (4.54e10, 1e-3),
        "E_m_from_membrane": (False, None),
        "grid_spacing_nm": (2.5, 1e-9),
    },
    "sensor": {
        "e_threshold_mV_per_m": (2.8e9, 1e-3),
        "b_threshold_uT": (1.26, 1e-6),
        "integration_time_ms": (1.0, 1e-3),
        "collection_gain": (5.0, None),
        "sensitivity_exponent": (0.5, None),
    },
    "growth": {
        "threshold_rad": (math.pi / 36, None),
        "axis_angle_deg": (0.0, None),
    },
}

_SPECIES_KEYS = {"valence", "D_m2_per_s", "c_in_mM", "c_out_mM"}


def _section(raw: Mapping[str, Any], name: str) -> dict[str, Any]:
    sec = raw.get(name, {})
    if not isinstance(sec, Mapping):
        raise ConfigError("must be a table", name)
    known = _SCHEMA[name]
    unknown = set(sec) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)}", name)
    out = {}
    for key, (default, factor) in known.items():
        value = sec.get(key, default)
        if value is not None and factor is not None:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("must be a number", f"{name}.{key}")
            value = float(value) * factor
        out[key] = value
    return out


def _species(raw: Mapping[str, Any]) -> tuple[IonSpecies, ...]:
    table = raw.get("species", {})
    if not isinstance(table, Mapping):
        raise ConfigError("must be a table", "species")
    names = list(_TABLE_SPECIES) + [n for n in table if n not in _TABLE_SPECIES]
    out = []
    for name in names:
        entry = table.get(name, {})
        if not isinstance(entry, Mapping):
            raise ConfigError("must be a table", f"species.{name}")
        unknown = set(entry) - _SPECIES_KEYS
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)}", f"species.{name}")
        z, D, cin, cout = _TABLE_SPECIES.get(name, (None, None, None, None))
        try:
            z = int(entry.get("valence", z))
            D = float(entry.get("D_m2_per_s", D))
            cin = float(entry.get("c_in_mM", cin))
            cout = float(entry.get("c_out_mM", cout))
        except TypeError as exc:
            raise ConfigError("incomplete species entry", f"species.{name}") from exc
        out.append(IonSpecies(name, z, D, cin, cout))
    return tuple(out)


def build_config(raw: Mapping[str, Any] | None = None) -> ModelConfig:
    """Build and validate a configuration from a parsed key-value mapping."""
    raw = dict(raw or {})
    unknown = set(raw) - set(_SCHEMA) - {"species"}
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")

    cs = _section(raw, "constants")
    constants = PhysicalConstants(cs["e_C"], cs["k_b_J_per_K"], cs["N_A_per_mol"],
                                  cs["mu0_H_per_m"], cs["eps0_F_per_m"])
    constants.validate()

    es = _section(raw, "electrolyte")
    electrolyte = ElectrolyteModel(_species(raw), es["temperature_K"],
                                   float(es["eps_r_water"]) * constants.eps0)
    electrolyte.validate()

    gs = _section(raw, "geometry")
    geometry = GeometryParams(gs["axon_radius_nm"], gs["axial_length_um"],
                              gs["outer_radius_um"], gs["debye_band_nm"])
    geometry.validate()

    hs = _section(raw, "hh")
    T = electrolyte.temperature
    V_Na = hs["V_Na_mV"]
    V_K = hs["V_K_mV"]
    try:
        if V_Na is None:
            V_Na = nernst_potential(electrolyte.get("Na"), T, constants)
        if V_K is None:
            V_K = nernst_potential(electrolyte.get("K"), T, constants)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc), "species") from exc
    hh = HHParams(
        g_Na=hs["g_Na_mS_per_cm2"], g_NaL=hs["g_NaL_mS_per_cm2"],
        g_K=hs["g_K_mS_per_cm2"], g_KL=hs["g_KL_mS_per_cm2"],
        phi=hs["phi_per_ms"], C_m=hs["C_m_uF_per_cm2"], V_rest=hs["V_rest_mV"],
        V_Na=V_Na, V_K=V_K,
        stimulus=Stimulus(hs["stimulus_amplitude_uA_per_cm2"],
                          hs["stimulus_onset_ms"], hs["stimulus_duration_ms"]),
        velocity=hs["velocity_m_per_s"],
        balance_rest=bool(hs["balance_resting_current"]),
        t_end=hs["t_end_ms"], dt=hs["dt_us"], wave_spacing=hs["wave_spacing_um"],
    )
    hh.validate()

    bs = _section(raw, "bc")
    sigma = _internal_conductivity(electrolyte, constants)
    R = geometry.axon_radius
    source = bs["q_i0_source"]
    if bs["q_i0_C_per_m"] is not None and "q_i0_source" not in raw.get("bc", {}):
        source = "value"
    if source == "value":
        if bs["q_i0_C_per_m"] is None:
            raise ConfigError("q_i0_source = 'value' needs bc.q_i0_C_per_m", "bc.q_i0_C_per_m")
        q_i0 = bs["q_i0_C_per_m"]
    elif source == "formula":
        bulk = internal_net_charge_density(electrolyte, constants)
        q_i0 = 2 * math.pi * R * hh.C_m * hh.V_rest + math.pi * R**2 * bulk
    elif source == "resting_field":
        # at rest only the q_i0 term survives: E_r = q_i0 / (2 pi R eps)
        q_i0 = 2 * math.pi * R * electrolyte.permittivity * bs["resting_field_mV_per_m"]
    else:
        raise ConfigError("must be 'resting_field', 'formula' or 'value'", "bc.q_i0_source")
    bc = MembraneBCParams(float(bs["gamma"]), float(bs["eta"]), q_i0, sigma)
    bc.validate()

    ss = _section(raw, "solver")
    solver = SolverSettings(
        tol=float(ss["tol"]), max_iter=int(ss["max_iter"]),
        fine_spacing=ss["fine_spacing_nm"], growth_factor=float(ss["growth_factor"]),
        axial_spacing=ss["axial_spacing_um"],
        window=ss["window_um"] if ss["window_um"] is not None else geometry.axial_length,
        window_center=ss["window_center_um"],
        node_budget=int(ss["node_budget"]), stall_sweeps=int(ss["stall_sweeps"]),
        anderson_depth=int(ss["anderson_depth"]), gummel_sweeps=int(ss["gummel_sweeps"]),
    )

    ps = _section(raw, "pillar")
    pillar = PillarSettings(
        diameter=ps["diameter_nm"], height=ps["height_nm"], contact=str(ps["contact"]),
        nv_depth=ps["nv_depth_nm"], eps_diamond=float(ps["eps_diamond"]),
        E_m=ps["E_m_mV_per_m"], E_m_from_membrane=bool(ps["E_m_from_membrane"]),
        grid_spacing=ps["grid_spacing_nm"],
    )

    ns = _section(raw, "sensor")
    sensor = SensorSettings(ns["e_threshold_mV_per_m"], ns["b_threshold_uT"],
                            ns["integration_time_ms"], float(ns["collection_gain"]),
                            float(ns["sensitivity_exponent"]))

    gr = _section(raw, "growth")
    growth = GrowthSettings(float(gr["threshold_rad"]), math.radians(float(gr["axis_angle_deg"])))

    cfg = ModelConfig(constants, electrolyte, geometry, hh, bc, solver, pillar,
                      sensor, growth, raw=raw)
    cfg.validate()
    return cfg


def default_config() -> ModelConfig:
    return build_config({})


def load_config(path: str | os.PathLike | None = None) -> ModelConfig:
    """Read a TOML configuration file.

    With ``path=None`` the ``AXONFIELD_CONFIG`` environment variable is
    consulted; if that is unset too, the defaults are returned.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            return default_config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return build_config(raw)
