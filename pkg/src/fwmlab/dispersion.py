"""Effective index and four-wave-mixing phase matching in a gas-filled hollow-core fiber.

The guided mode is the capillary (Marcatili) HE11 mode of a core of radius R,
optionally corrected for the anti-resonant glass walls of the cladding tubes
(Zeisberger-Schmidt analytic model). Without the wall term the pure capillary
dispersion cannot phase-match xenon near 4 bar at R = 22 um; the wall term
supplies the band-edge dispersion of the real inhibited-coupling fiber.

Frequencies are angular (rad/s) throughout; wavelengths in metres.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.constants import R as GAS_CONSTANT
from scipy.constants import c
from scipy.optimize import brentq

BESSEL_J0_ZERO = 2.404825557695773


class DomainError(ValueError):
    """Frequency outside the validity band of a dispersion model."""


class UnguidedError(ValueError):
    """The requested frequency is not guided by the core (n_eff would be complex)."""


class NoPhaseMatchError(RuntimeError):
    """No sign change of the phase mismatch in the searched detuning range."""


@dataclass(frozen=True)
class SellmeierModel:
    """n^2 - 1 = sum_j B_j lam^2 / (lam^2 - C_j), lam in micrometres.

    ``valid_band`` is the wavelength band (m) where the coefficients may be used.
    """

    B: tuple[float, ...]
    C_um2: tuple[float, ...]
    valid_band: tuple[float, float] = (0.2e-6, 3.0e-6)

    def index(self, omega):
        omega = np.asarray(omega)
        check_band(omega, self.valid_band)
        lam2 = (2 * np.pi * c / omega * 1e6) ** 2
        s = sum(b * lam2 / (lam2 - cc) for b, cc in zip(self.B, self.C_um2))
        return np.sqrt(1 + s)


def check_band(omega, band: tuple[float, float]) -> None:
    lo, hi = band
    w = np.real(np.asarray(omega))
    wmin, wmax = 2 * np.pi * c / hi, 2 * np.pi * c / lo
    if np.any(w < wmin * (1 - 1e-12)) or np.any(w > wmax * (1 + 1e-12)):
        raise DomainError(
            f"frequency outside valid band {lo * 1e9:.0f}-{hi * 1e9:.0f} nm "
            f"(omega in [{wmin:.4e}, {wmax:.4e}] rad/s)"
        )


# Malitson (1965) fused silica, 0.21-3.71 um.
FUSED_SILICA = SellmeierModel(
    B=(0.6961663, 0.4079426, 0.8974794),
    C_um2=(0.0684043**2, 0.1162414**2, 9.896161**2),
    valid_band=(0.21e-6, 3.71e-6),
)


@dataclass(frozen=True)
class GasState:
    species: str
    pressure: float  # Pa
    temperature: float  # K
    refractivity_model: SellmeierModel
    reference_density: float  # mol/m^3, density at which the model is stated

    def __post_init__(self):
        if self.pressure <= 0:
            raise ValueError("pressure must be > 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.reference_density <= 0:
            raise ValueError("reference_density must be > 0")

    @property
    def density(self) -> float:
        """Ideal-gas molar density (mol/m^3)."""
        return self.pressure / (GAS_CONSTANT * self.temperature)

    @property
    def density_ratio(self) -> float:
        return self.density / self.reference_density

    def at_pressure(self, pressure: float) -> "GasState":
        return replace(self, pressure=pressure)


@dataclass(frozen=True)
class FiberSpec:
    core_radius: float  # m
    fiber_length: float = 1.0  # m
    mode_constant_u01: float = BESSEL_J0_ZERO
    nonlinear_coefficient_gamma: Optional[float] = None  # 1/(W m) at the gas reference density
    loss_db_per_m: dict = field(default_factory=dict)
    wall_thickness: Optional[float] = None  # m; None -> bare capillary
    wall_material: SellmeierModel = FUSED_SILICA

    def __post_init__(self):
        if self.core_radius <= 0:
            raise ValueError("core_radius must be > 0")
        if self.fiber_length <= 0:
            raise ValueError("fiber_length must be > 0")
        if any(v < 0 for v in self.loss_db_per_m.values()):
            raise ValueError("loss_db_per_m values must be >= 0")
        if self.wall_thickness is not None and self.wall_thickness <= 0:
            raise ValueError("wall_thickness must be > 0")


@dataclass(frozen=True)
class PumpSpec:
    center_wavelength: float  # m
    pulse_duration_fwhm: float  # s
    repetition_rate: float  # Hz
    average_power: float  # W

    # Gaussian pulse: peak power = 0.94 * pulse energy / FWHM duration.
    GAUSSIAN_SHAPE_FACTOR = 0.94

    def __post_init__(self):
        for name in ("center_wavelength", "pulse_duration_fwhm", "repetition_rate", "average_power"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def omega(self) -> float:
        return 2 * np.pi * c / self.center_wavelength

    @property
    def peak_power(self) -> float:
        energy = self.average_power / self.repetition_rate
        return self.GAUSSIAN_SHAPE_FACTOR * energy / self.pulse_duration_fwhm

    @property
    def period(self) -> float:
        return 1.0 / self.repetition_rate

    def with_power(self, average_power: float) -> "PumpSpec":
        return replace(self, average_power=average_power)


@dataclass(frozen=True)
class PhaseMatchSolution:
    signal_angular_frequency: float
    idler_angular_frequency: float
    detuning_ohm: float
    residual_mismatch: float

    @property
    def signal_wavelength(self) -> float:
        return 2 * np.pi * c / self.signal_angular_frequency

    @property
    def idler_wavelength(self) -> float:
        return 2 * np.pi * c / self.idler_angular_frequency

    @property
    def detuning_hz(self) -> float:
        return self.detuning_ohm / (2 * np.pi)


def gas_refractive_index(gas: GasState, omega):
    """Refractive index of the gas, scaled linearly with density from the reference model."""
    n_ref = gas.refractivity_model.index(omega)
    return 1 + (n_ref - 1) * gas.density_ratio


def effective_index(fiber: FiberSpec, gas: GasState, omega):
    """Effective index of the fundamental core mode.

    Capillary term: n_gas * sqrt(1 - (u01 c / (R omega n_gas))^2). With a wall
    thickness set, the anti-resonant wall correction
    -u01^2 / (k^3 n_gas^2 R^3) * cot(phi) (eps + 1) / (2 sqrt(eps - 1)) is added,
    phi = k n_gas d sqrt(eps - 1), eps = (n_glass / n_gas)^2.

    Accepts complex omega (used for complex-step derivatives).
    """
    omega = np.asarray(omega)
    if np.any(np.real(omega) <= 0):
        raise ValueError("omega must be > 0")
    n_gas = gas_refractive_index(gas, omega)
    R = fiber.core_radius
    u = fiber.mode_constant_u01
    arg = 1 - (u * c / (R * omega * n_gas)) ** 2
    if np.any(np.real(arg) <= 0):
        raise UnguidedError("unguided frequency: capillary cutoff reached")
    n_eff = n_gas * np.sqrt(arg)
    if fiber.wall_thickness is not None:
        k = omega / c
        eps = (fiber.wall_material.index(omega) / n_gas) ** 2
        root = np.sqrt(eps - 1)
        phi = k * n_gas * fiber.wall_thickness * root
        n_eff = n_eff - u**2 / (k**3 * n_gas**2 * R**3) / np.tan(phi) * (eps + 1) / (2 * root)
    return n_eff


def propagation_constant(fiber: FiberSpec, gas: GasState, omega):
    """beta(omega) = n_eff omega / c, in 1/m."""
    return effective_index(fiber, gas, omega) * np.asarray(omega) / c


def group_delay(fiber: FiberSpec, gas: GasState, omega):
    """d(beta)/d(omega) in s/m, by complex-step differentiation."""
    omega = np.asarray(omega, dtype=float)
    h = 1e-20 * omega
    return np.imag(propagation_constant(fiber, gas, omega + 1j * h)) / h


def nonlinear_gamma(fiber: FiberSpec, gas: GasState) -> float:
    if fiber.nonlinear_coefficient_gamma is None:
        return 0.0
    return fiber.nonlinear_coefficient_gamma * gas.density_ratio


def phase_mismatch(omega_s, omega_i, pump: PumpSpec, fiber: FiberSpec, gas: GasState,
                   include_nonlinear: bool = False):
    """Delta beta = beta(ws) + beta(wi) - 2 beta(wp) [+ 2 gamma P_peak], in 1/m.

    Requires ws + wi = 2 wp to 1e-9 relative.
    """
    ws = np.asarray(omega_s, dtype=float)
    wi = np.asarray(omega_i, dtype=float)
    wp = pump.omega
    if np.any(np.abs(ws + wi - 2 * wp) > 1e-9 * 2 * wp):
        raise ValueError("energy conservation violated: omega_s + omega_i != 2 omega_p")
    dbeta = (propagation_constant(fiber, gas, ws) + propagation_constant(fiber, gas, wi)
             - 2 * propagation_constant(fiber, gas, wp))
    if include_nonlinear:
        dbeta = dbeta + 2 * nonlinear_gamma(fiber, gas) * pump.peak_power
    return dbeta


def _detuning_mismatch(omega_detuning, pump, fiber, gas, include_nonlinear):
    wp = pump.omega
    return phase_mismatch(wp + omega_detuning, wp - omega_detuning, pump, fiber, gas,
                          include_nonlinear)


def max_detuning(pump: PumpSpec, gas: GasState, fiber: FiberSpec) -> float:
    """Largest detuning keeping both sidebands inside every model's validity band."""
    wp = pump.omega
    bands = [gas.refractivity_model.valid_band]
    if fiber.wall_thickness is not None:
        bands.append(fiber.wall_material.valid_band)
    lo = max(b[0] for b in bands)
    hi = min(b[1] for b in bands)
    w_hi = 2 * np.pi * c / lo
    w_lo = 2 * np.pi * c / hi
    return min(w_hi - wp, wp - w_lo) * (1 - 1e-9)


def solve_phase_match(pump: PumpSpec, fiber: FiberSpec, gas: GasState,
                      omega_min_detuning: float = 2 * np.pi * 10e12,
                      omega_max_detuning: Optional[float] = None,
                      include_nonlinear: bool = False,
                      scan_points: int = 4000,
                      tol: float = 1e-4) -> PhaseMatchSolution:
    """Lowest-detuning root of Delta beta(Omega) above ``omega_min_detuning``.

    Sign changes on a uniform scan are refined with Brent's method. Sign flips
    across the poles of the wall-resonance term are rejected by the residual check.
    """
    if omega_max_detuning is None:
        omega_max_detuning = max_detuning(pump, gas, fiber)
    if omega_max_detuning <= omega_min_detuning:
        raise NoPhaseMatchError("empty detuning interval")
    grid = np.linspace(omega_min_detuning, omega_max_detuning, scan_points)

    def f(x):
        return _detuning_mismatch(x, pump, fiber, gas, include_nonlinear)

    values = f(grid)
    sign = np.sign(values)
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        root = brentq(f, grid[i], grid[i + 1], xtol=1e-6, rtol=4 * np.finfo(float).eps)
        residual = float(f(root))
        if abs(residual) < tol:
            wp = pump.omega
            return PhaseMatchSolution(wp + root, wp - root, root, residual)
    raise NoPhaseMatchError(
        f"no phase matching at this pressure ({gas.pressure / 1e5:.3g} bar) for detuning in "
        f"[{omega_min_detuning / 2e12 / np.pi:.1f}, {omega_max_detuning / 2e12 / np.pi:.1f}] THz"
    )


def pressure_sweep(pump: PumpSpec, fiber: FiberSpec, gas_template: GasState,
                   pressures: Sequence[float], **solver_kwargs):
    """Solve phase matching at each pressure (Pa); failures recorded as None."""
    if any(b < a for a, b in zip(pressures, pressures[1:])):
        raise ValueError("pressures must be sorted ascending")
    out = []
    for p in pressures:
        try:
            sol = solve_phase_match(pump, fiber, gas_template.at_pressure(p), **solver_kwargs)
        except NoPhaseMatchError:
            sol = None
        out.append((p, sol))
    return out


SWEEP_CSV_HEADER = "pressure_bar,signal_nm,idler_nm,detuning_THz,residual_mismatch_per_m"


def sweep_to_csv(sweep) -> str:
    lines = [SWEEP_CSV_HEADER]
    for p, sol in sweep:
        if sol is None:
            lines.append(f"{p / 1e5:.6g},,,,")
        else:
            lines.append(
                f"{p / 1e5:.6g},{sol.signal_wavelength * 1e9:.6f},{sol.idler_wavelength * 1e9:.6f},"
                f"{sol.detuning_hz / 1e12:.6f},{sol.residual_mismatch:.3e}"
            )
    return "\n".join(lines) + "\n"


def wavelength_to_omega(lam):
    return 2 * np.pi * c / np.asarray(lam)


def omega_to_wavelength(omega):
    return 2 * np.pi * c / np.asarray(omega)
