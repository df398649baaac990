"""Joint spectral amplitude of the pair state, spectral filtering and Schmidt decomposition."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.constants import c

from .dispersion import (FiberSpec, GasState, NoPhaseMatchError, PumpSpec, nonlinear_gamma,
                         omega_to_wavelength, propagation_constant, solve_phase_match,
                         wavelength_to_omega)

TIME_BANDWIDTH_GAUSSIAN = 0.441


@dataclass
class JsaGrid:
    signal_axis: np.ndarray  # rad/s, increasing
    idler_axis: np.ndarray  # rad/s, increasing
    amplitude: np.ndarray  # complex, shape (n_s, n_i)
    normalized: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("signal_axis", "idler_axis"):
            ax = getattr(self, name)
            if ax.ndim != 1 or np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        if self.amplitude.shape != (self.signal_axis.size, self.idler_axis.size):
            raise ValueError("amplitude shape does not match axes")

    @property
    def cell_area(self) -> float:
        return _spacing(self.signal_axis) * _spacing(self.idler_axis)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.cell_area)

    def normalize(self) -> "JsaGrid":
        n = self.norm()
        if n <= 0:
            raise ValueError("cannot normalize an all-zero JSA")
        return replace(self, amplitude=self.amplitude / np.sqrt(n), normalized=True,
                       metadata=dict(self.metadata))


@dataclass(frozen=True)
class SchmidtSpectrum:
    coefficients: np.ndarray  # descending, sum 1
    purity: float
    schmidt_number: float


@dataclass(frozen=True)
class FilterSpec:
    center_wavelength: float  # m
    full_width: float  # m
    shape: Literal["rectangular", "gaussian"] = "rectangular"

    def __post_init__(self):
        if self.full_width <= 0:
            raise ValueError("full_width must be > 0")
        if self.shape not in ("rectangular", "gaussian"):
            raise ValueError(f"unknown filter shape {self.shape!r}")

    @property
    def omega_band(self) -> tuple[float, float]:
        lo = wavelength_to_omega(self.center_wavelength + self.full_width / 2)
        hi = wavelength_to_omega(self.center_wavelength - self.full_width / 2)
        return float(lo), float(hi)


def _spacing(axis: np.ndarray) -> float:
    return float((axis[-1] - axis[0]) / (axis.size - 1)) if axis.size > 1 else 1.0


def pump_bandwidth(pump: PumpSpec) -> float:
    """Transform-limited spectral intensity FWHM of the pump, in Hz."""
    return TIME_BANDWIDTH_GAUSSIAN / pump.pulse_duration_fwhm


def pump_envelope(pump: PumpSpec, omega_sum, chirp: float = 0.0):
    """Two-photon pump amplitude alpha(ws + wi), peak 1 at ws + wi = 2 wp.

    The envelope is the self-convolution of the Gaussian pump amplitude, so its
    intensity FWHM in the sum-frequency coordinate is sqrt(2) times the pump
    spectral FWHM. ``chirp`` (s^2) adds a quadratic spectral phase.
    """
    x = np.asarray(omega_sum) - 2 * pump.omega
    fwhm = np.sqrt(2) * 2 * np.pi * pump_bandwidth(pump)
    amp = np.exp(-2 * np.log(2) * x**2 / fwhm**2)
    if chirp:
        return amp * np.exp(1j * chirp * x**2)
    return amp.astype(complex)


def grid_mismatch(ws, wi, pump: PumpSpec, fiber: FiberSpec, gas: GasState,
                  include_nonlinear: bool = False):
    """Delta beta on the (ws, wi) plane with the pump at (ws + wi) / 2."""
    dbeta = (propagation_constant(fiber, gas, ws) + propagation_constant(fiber, gas, wi)
             - 2 * propagation_constant(fiber, gas, (ws + wi) / 2))
    if include_nonlinear:
        dbeta = dbeta + 2 * nonlinear_gamma(fiber, gas) * pump.peak_power
    return dbeta


def default_windows(solution, signal_filter: FilterSpec, idler_filter: FilterSpec,
                    n_widths: float = 4.0):
    """Frequency windows of +-n_widths filter widths around the phase-matched wavelengths."""
    out = []
    for lam0, f in ((solution.signal_wavelength, signal_filter),
                    (solution.idler_wavelength, idler_filter)):
        half = n_widths * f.full_width
        out.append((float(wavelength_to_omega(lam0 + half)), float(wavelength_to_omega(lam0 - half))))
    return tuple(out)


def build_jsa(pump: PumpSpec, fiber: FiberSpec, gas: GasState, signal_window, idler_window,
              resolution=(256, 256), include_nonlinear: bool = False, chirp: float = 0.0,
              fiber_length: float | None = None) -> JsaGrid:
    """Normalized JSA alpha(ws+wi) sinc(dB L/2) exp(i dB L/2) on a uniform frequency grid."""
    n_s, n_i = resolution
    if n_s < 64 or n_i < 64:
        raise ValueError("resolution must be >= 64 per axis")
    L = fiber.fiber_length if fiber_length is None else fiber_length
    ws = np.linspace(*signal_window, n_s)
    wi = np.linspace(*idler_window, n_i)
    WS, WI = np.meshgrid(ws, wi, indexing="ij")
    half_phase = grid_mismatch(WS, WI, pump, fiber, gas, include_nonlinear) * L / 2
    amp = pump_envelope(pump, WS + WI, chirp) * np.sinc(half_phase / np.pi) * np.exp(1j * half_phase)

    meta = {"fiber_length_m": L, "warnings": []}
    try:
        sol = solve_phase_match(pump, fiber, gas, include_nonlinear=include_nonlinear)
        meta["phase_matched_signal_nm"] = sol.signal_wavelength * 1e9
        meta["phase_matched_idler_nm"] = sol.idler_wavelength * 1e9
        if not (ws[0] <= sol.signal_angular_frequency <= ws[-1]
                and wi[0] <= sol.idler_angular_frequency <= wi[-1]):
            meta["warnings"].append("window excludes the phase-matched point")
    except NoPhaseMatchError:
        meta["warnings"].append("no phase-matched point for this configuration")
    return JsaGrid(ws, wi, amp, metadata=meta).normalize()


def _cell_coverage(axis: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fraction of each grid cell (centred on the axis points) inside [lo, hi]."""
    d = _spacing(axis)
    left = axis - d / 2
    right = axis + d / 2
    return np.clip((np.minimum(right, hi) - np.maximum(left, lo)) / d, 0.0, 1.0)


def filter_transmission(f: FilterSpec, axis: np.ndarray) -> np.ndarray:
    """Amplitude transmission of a bandpass filter sampled on a frequency axis."""
    if f.shape == "rectangular":
        return _cell_coverage(axis, *f.omega_band)
    lam = omega_to_wavelength(axis)
    power = np.exp(-4 * np.log(2) * (lam - f.center_wavelength) ** 2 / f.full_width**2)
    return np.sqrt(power)


def apply_filters(grid: JsaGrid, signal_filter: FilterSpec, idler_filter: FilterSpec) -> JsaGrid:
    """Multiply by the filter transmissions and renormalize.

    Metadata gains ``transmitted_fraction`` (pair probability passing both filters)
    and ``heralding_fraction`` (idler pass probability given a filtered signal).
    """
    if not grid.normalized:
        raise ValueError("grid must be normalized")
    ts = filter_transmission(signal_filter, grid.signal_axis)
    ti = filter_transmission(idler_filter, grid.idler_axis)
    if not np.any(ts > 0) or not np.any(ti > 0):
        raise ValueError("filter window is disjoint from the JSA grid")
    signal_only = grid.amplitude * ts[:, None]
    both = signal_only * ti[None, :]
    p_both = float(np.sum(np.abs(both) ** 2) * grid.cell_area)
    p_signal = float(np.sum(np.abs(signal_only) ** 2) * grid.cell_area)
    if p_both <= 0:
        raise ValueError("filters block the whole JSA")
    meta = dict(grid.metadata)
    meta["transmitted_fraction"] = p_both
    meta["heralding_fraction"] = p_both / p_signal
    out = JsaGrid(grid.signal_axis, grid.idler_axis, both, metadata=meta)
    return out.normalize()


def schmidt_decompose(grid: JsaGrid) -> SchmidtSpectrum:
    if not grid.normalized:
        raise ValueError("grid must be normalized")
    if not np.all(np.isfinite(grid.amplitude)):
        raise ValueError("JSA contains non-finite entries")
    s = np.linalg.svd(grid.amplitude, compute_uv=False)
    lam = s**2 / np.sum(s**2)
    purity = float(np.sum(lam**2))
    return SchmidtSpectrum(lam, purity, 1.0 / purity)


def export_jsa(grid: JsaGrid, spectrum: SchmidtSpectrum, out_dir, extra_meta=None,
               comment: str = "") -> None:
    """Write |JSA|, arg(JSA) (rows: signal, columns: idler), both axes and a metadata JSON.

    ``comment`` is written as a leading "# ..." line of every CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lead = f"# {comment}\n" if comment else ""
    np.savetxt(out / "jsa_abs.csv", np.abs(grid.amplitude), delimiter=",", fmt="%.9e",
               header=lead.rstrip("\n"), comments="")
    np.savetxt(out / "jsa_phase.csv", np.angle(grid.amplitude), delimiter=",", fmt="%.9e",
               header=lead.rstrip("\n"), comments="")
    for name, axis in (("signal", grid.signal_axis), ("idler", grid.idler_axis)):
        table = np.column_stack([axis, 2 * np.pi * c / axis * 1e9])
        np.savetxt(out / f"{name}_axis.csv", table, delimiter=",", fmt="%.12e",
                   header=lead + "omega_rad_per_s,wavelength_nm", comments="")
    meta = {
        "purity": spectrum.purity,
        "schmidt_number": spectrum.schmidt_number,
        "top_coefficients": [float(x) for x in spectrum.coefficients[:8]],
        "shape": list(grid.amplitude.shape),
        **{k: v for k, v in grid.metadata.items()},
    }
    if extra_meta:
        meta.update(extra_meta)
    (out / "jsa_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
