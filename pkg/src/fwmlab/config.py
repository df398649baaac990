"""Scenario configuration: JSON with unit-suffixed fields, converted to SI at parse time.

Validation errors carry the dotted path of the offending field. The config hash
is the SHA-256 (first 16 hex digits) of the canonical JSON of the parsed input,
so any override (seed, power) changes it.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .dispersion import FUSED_SILICA, FiberSpec, GasState, PumpSpec, SellmeierModel
from .jsa import FilterSpec
from .source import DetectorSpec, SourceModel

GAS_CONSTANT = 8.314462618
BAR = 1e5
DATA_DIR = Path(__file__).parent / "data"
REFERENCE_SCENARIO = DATA_DIR / "paper_replay.json"


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _get(d: dict, key: str, path: str, default: Any = ...):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return d[key]


def _num(d, key, path, default=..., lo=None, hi=None, strict_lo=False, integer=False):
    p = f"{path}.{key}" if path else key
    v = _get(d, key, path, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(p, f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(p, "expected an integer")
    if not np.isfinite(v):
        raise ConfigError(p, "must be finite")
    if lo is not None and (v < lo or (strict_lo and v == lo)):
        raise ConfigError(p, f"must be {'>' if strict_lo else '>='} {lo}")
    if hi is not None and v > hi:
        raise ConfigError(p, f"must be <= {hi}")
    return int(v) if integer else float(v)


def _num_list(d, key, path, default=..., lo=None, strict_lo=False):
    p = f"{path}.{key}" if path else key
    v = _get(d, key, path, default)
    if not isinstance(v, list) or not v:
        raise ConfigError(p, "expected a non-empty list of numbers")
    return tuple(_num({f"{key}[{k}]": x}, f"{key}[{k}]", path, lo=lo, strict_lo=strict_lo)
                 for k, x in enumerate(v))


@dataclass(frozen=True)
class CorrelatorSettings:
    bin_width_ps: int = 1400
    range_ps: int = 10_000_200
    peak_half_width_ps: int = 2100
    n_side_peaks: int = 20
    coincidence_window_ps: int = 2100


@dataclass(frozen=True)
class JsaSettings:
    resolution: tuple = (256, 256)
    window_filter_widths: float = 4.0
    include_nonlinear: bool = False
    chirp_s2: float = 0.0
    apply_filters: bool = True


@dataclass(frozen=True)
class SourceSettings:
    eta_per_mW2: float
    schmidt_coefficients: Optional[tuple] = None  # None -> from the filtered JSA
    thermal: bool = True
    raman_signal_per_mW: float = 0.0
    raman_idler_per_mW: float = 0.0
    schmidt_tail_cutoff: float = 1e-6  # drop Schmidt modes holding less total weight


@dataclass(frozen=True)
class SimulationSettings:
    power_mW: float = 30.0
    n_pulses: int = 200_000_000
    idler_beamsplitter: bool = False


@dataclass(frozen=True)
class SweepSettings:
    powers_mW: tuple = (10.0, 20.0, 30.0, 60.0, 100.0)
    pulses_per_point: int = 200_000_000


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    fiber: FiberSpec
    gas: GasState
    pump: PumpSpec
    source: SourceSettings
    detectors: dict
    signal_filter: FilterSpec
    idler_filter: FilterSpec
    correlator: CorrelatorSettings
    jsa: JsaSettings
    simulation: SimulationSettings
    sweep: SweepSettings
    pressures_bar: tuple
    min_detuning_THz: float
    seed: int
    raw: dict = field(default_factory=dict, repr=False, compare=False)
    acceptance: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def source_model(self, schmidt_coefficients=None) -> SourceModel:
        lam = schmidt_coefficients if schmidt_coefficients is not None else self.source.schmidt_coefficients
        if lam is None:
            raise ValueError("Schmidt coefficients come from the JSA; compute them first")
        lam = truncate_schmidt(lam, self.source.schmidt_tail_cutoff)
        return SourceModel(self.source.eta_per_mW2, self.pump, lam,
                           self.source.raman_signal_per_mW, self.source.raman_idler_per_mW,
                           self.source.thermal)


def truncate_schmidt(coefficients, cutoff: float = 1e-6) -> tuple:
    """Keep the leading modes holding all but ``cutoff`` of the weight; renormalize."""
    lam = np.sort(np.asarray(coefficients, dtype=float))[::-1]
    lam = lam / lam.sum()
    tail = np.cumsum(lam[::-1])[::-1]  # weight of modes k, k+1, ...
    keep = max(int(np.count_nonzero(tail > cutoff)), 1)
    lam = lam[:keep]
    return tuple(float(x) for x in lam / lam.sum())


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _sellmeier(d, path) -> SellmeierModel:
    B = _num_list(d, "B", path)
    C = _num_list(d, "C_um2", path, lo=0)
    if len(B) != len(C):
        raise ConfigError(f"{path}.C_um2", "must have the same length as B")
    band = _num_list(d, "valid_band_um", path, lo=0, strict_lo=True)
    if len(band) != 2 or band[0] >= band[1]:
        raise ConfigError(f"{path}.valid_band_um", "expected [low, high]")
    return SellmeierModel(B, C, (band[0] * 1e-6, band[1] * 1e-6))


def _detector(d, path) -> DetectorSpec:
    return DetectorSpec(
        quantum_efficiency=_num(d, "quantum_efficiency", path, lo=0, hi=1),
        path_transmission=_num(d, "path_transmission", path, lo=0, hi=1),
        dark_count_rate=_num(d, "dark_count_Hz", path, lo=0),
        dead_time=_num(d, "dead_time_ns", path, 50.0, lo=0) * 1e-9,
        jitter_fwhm=_num(d, "jitter_fwhm_ps", path, 350.0, lo=0) * 1e-12,
    )


def _filter(d, path) -> FilterSpec:
    shape = _get(d, "shape", path, "rectangular")
    if shape not in ("rectangular", "gaussian"):
        raise ConfigError(f"{path}.shape", "must be 'rectangular' or 'gaussian'")
    return FilterSpec(_num(d, "center_nm", path, lo=0, strict_lo=True) * 1e-9,
                      _num(d, "width_nm", path, lo=0, strict_lo=True) * 1e-9, shape)


def parse_config(raw: dict) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    f = _get(raw, "fiber", "")
    wall = _num(f, "wall_thickness_nm", "fiber", None, lo=0, strict_lo=True)
    gamma = _num(f, "gamma_per_W_km", "fiber", None, lo=0)
    losses = _get(f, "loss_dB_per_m", "fiber", {})
    if not isinstance(losses, dict):
        raise ConfigError("fiber.loss_dB_per_m", "expected an object")
    for k, v in losses.items():
        _num(losses, k, "fiber.loss_dB_per_m", lo=0)
    fiber = FiberSpec(
        core_radius=_num(f, "core_radius_um", "fiber", lo=0, strict_lo=True) * 1e-6,
        fiber_length=_num(f, "length_m", "fiber", lo=0, strict_lo=True),
        mode_constant_u01=_num(f, "mode_constant_u01", "fiber", 2.404825557695773, lo=0, strict_lo=True),
        nonlinear_coefficient_gamma=None if gamma is None else gamma * 1e-3,
        loss_db_per_m=dict(losses),
        wall_thickness=None if wall is None else wall * 1e-9,
        wall_material=FUSED_SILICA,
    )

    g = _get(raw, "gas", "")
    refr = _get(g, "refractivity", "gas")
    p_ref = _num(refr, "reference_pressure_bar", "gas.refractivity", lo=0, strict_lo=True) * BAR
    T_ref = _num(refr, "reference_temperature_K", "gas.refractivity", lo=0, strict_lo=True)
    gas = GasState(
        species=str(_get(g, "species", "gas")),
        pressure=_num(g, "pressure_bar", "gas", lo=0, strict_lo=True) * BAR,
        temperature=_num(g, "temperature_K", "gas", lo=0, strict_lo=True),
        refractivity_model=_sellmeier(refr, "gas.refractivity"),
        reference_density=p_ref / (GAS_CONSTANT * T_ref),
    )

    p = _get(raw, "pump", "")
    pump = PumpSpec(
        center_wavelength=_num(p, "center_wavelength_nm", "pump", lo=0, strict_lo=True) * 1e-9,
        pulse_duration_fwhm=_num(p, "pulse_duration_fs", "pump", lo=0, strict_lo=True) * 1e-15,
        repetition_rate=_num(p, "repetition_rate_MHz", "pump", lo=0, strict_lo=True) * 1e6,
        average_power=_num(p, "average_power_mW", "pump", lo=0, strict_lo=True) * 1e-3,
    )

    s = _get(raw, "source", "")
    lam = _get(s, "schmidt_coefficients", "source", "jsa")
    if lam == "jsa":
        lam = None
    else:
        lam = _num_list(s, "schmidt_coefficients", "source", lo=0)
        if abs(sum(lam) - 1) > 1e-9:
            raise ConfigError("source.schmidt_coefficients", "must sum to 1")
    stats = _get(s, "statistics", "source", "thermal")
    if stats not in ("thermal", "poisson"):
        raise ConfigError("source.statistics", "must be 'thermal' or 'poisson'")
    source = SourceSettings(
        eta_per_mW2=_num(s, "eta_per_mW2", "source", lo=0),
        schmidt_coefficients=lam,
        thermal=stats == "thermal",
        raman_signal_per_mW=_num(s, "raman_signal_per_mW", "source", 0.0, lo=0),
        raman_idler_per_mW=_num(s, "raman_idler_per_mW", "source", 0.0, lo=0),
        schmidt_tail_cutoff=_num(s, "schmidt_tail_cutoff", "source", 1e-6, lo=0, hi=0.5),
    )

    dets = _get(raw, "detectors", "")
    if not isinstance(dets, dict):
        raise ConfigError("detectors", "expected an object")
    detectors = {k: _detector(v, f"detectors.{k}") for k, v in dets.items()}
    if "s" not in detectors or not ("i" in detectors or {"i1", "i2"} <= detectors.keys()):
        raise ConfigError("detectors", "need 's' and either 'i' or both 'i1' and 'i2'")

    fl = _get(raw, "filters", "")
    signal_filter = _filter(_get(fl, "signal", "filters"), "filters.signal")
    idler_filter = _filter(_get(fl, "idler", "filters"), "filters.idler")

    c = _get(raw, "correlator", "", {})
    corr = CorrelatorSettings(
        bin_width_ps=_num(c, "bin_width_ps", "correlator", 1400, lo=0, strict_lo=True, integer=True),
        range_ps=_num(c, "range_ps", "correlator", 10_000_200, lo=0, strict_lo=True, integer=True),
        peak_half_width_ps=_num(c, "peak_half_width_ps", "correlator", 2100, lo=0, strict_lo=True, integer=True),
        n_side_peaks=_num(c, "n_side_peaks", "correlator", 20, lo=4, integer=True),
        coincidence_window_ps=_num(c, "coincidence_window_ps", "correlator", 2100, lo=0, strict_lo=True,
                                   integer=True),
    )
    period_ps = round(pump.period * 1e12)
    if corr.range_ps % corr.bin_width_ps:
        raise ConfigError("correlator.range_ps", "must be a multiple of bin_width_ps")
    if 2 * corr.peak_half_width_ps > period_ps:
        raise ConfigError("correlator.peak_half_width_ps", "peak windows overlap (> half the laser period)")
    if corr.n_side_peaks % 2:
        raise ConfigError("correlator.n_side_peaks", "must be even")
    if (corr.n_side_peaks // 2) * period_ps + corr.peak_half_width_ps > corr.range_ps:
        raise ConfigError("correlator.range_ps", "too small to hold the side peaks")

    j = _get(raw, "jsa", "", {})
    res = _get(j, "resolution", "jsa", [256, 256])
    if not (isinstance(res, list) and len(res) == 2 and all(isinstance(x, int) and x >= 64 for x in res)):
        raise ConfigError("jsa.resolution", "expected two integers >= 64")
    jsa = JsaSettings(tuple(res), _num(j, "window_filter_widths", "jsa", 4.0, lo=0, strict_lo=True),
                      bool(_get(j, "include_nonlinear", "jsa", False)),
                      _num(j, "chirp_fs2", "jsa", 0.0) * 1e-30,
                      bool(_get(j, "apply_filters", "jsa", True)))

    sim = _get(raw, "simulate", "", {})
    simulation = SimulationSettings(
        _num(sim, "power_mW", "simulate", 30.0, lo=0),
        _num(sim, "n_pulses", "simulate", 200_000_000, lo=0, integer=True),
        bool(_get(sim, "idler_beamsplitter", "simulate", False)),
    )
    if simulation.idler_beamsplitter and not {"i1", "i2"} <= detectors.keys():
        raise ConfigError("detectors", "idler beamsplitter needs detectors 'i1' and 'i2'")
    if not simulation.idler_beamsplitter and "i" not in detectors:
        raise ConfigError("detectors", "missing detector 'i'")

    sw = _get(raw, "sweep", "", {})
    powers = _num_list(sw, "powers_mW", "sweep", [10, 20, 30, 60, 100], lo=0, strict_lo=True)
    if len(set(powers)) != len(powers):
        raise ConfigError("sweep.powers_mW", "powers must be distinct")
    sweep = SweepSettings(powers, _num(sw, "pulses_per_point", "sweep", 200_000_000, lo=1, integer=True))

    pm = _get(raw, "phase_match", "", {})
    pressures = _num_list(pm, "pressures_bar", "phase_match", [2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
                          lo=0, strict_lo=True)
    if list(pressures) != sorted(pressures):
        raise ConfigError("phase_match.pressures_bar", "must be ascending")
    min_det = _num(pm, "min_detuning_THz", "phase_match", 10.0, lo=0, strict_lo=True)

    seed = _num(raw, "seed", "", 0, lo=0, hi=2**64 - 1, integer=True)
    return ScenarioConfig(str(raw.get("name", "scenario")), fiber, gas, pump, source, detectors,
                          signal_filter, idler_filter, corr, jsa, simulation, sweep, pressures, min_det,
                          seed, raw, raw.get("acceptance", {}))


def apply_overrides(raw: dict, seed: Optional[int] = None, power_mW: Optional[float] = None) -> dict:
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = int(seed)
    if power_mW is not None:
        raw.setdefault("simulate", {})["power_mW"] = float(power_mW)
    return raw


def load_raw(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("<root>", f"invalid JSON ({e})") from None


def load_config(path, seed: Optional[int] = None, power_mW: Optional[float] = None) -> ScenarioConfig:
    return parse_config(apply_overrides(load_raw(path), seed, power_mW))


def paper_replay_raw() -> dict:
    return json.loads(REFERENCE_SCENARIO.read_text())


def paper_replay_config(**overrides) -> ScenarioConfig:
    return parse_config(apply_overrides(paper_replay_raw(), **overrides))


def with_source(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(cfg, source=replace(cfg.source, **changes))
