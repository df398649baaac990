"""Source figures of merit, power-law fits and the closed-form rate model.

Rate convention: count rates are per second; per-pulse quantities divide by the
repetition rate R_p. With that convention the signal-idler cross-correlation
g2_si = n_coinc R_p / ((N_s - DC_s)(N_i - DC_i)) tends to 1/mu.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit, lsq_linear

from .correlator import HistogramDecomposition
from .source import IDLER, IDLER1, IDLER2, SIGNAL, DetectorSpec, SourceModel, mode_means

TERM_EXPONENTS = {"const": 0, "linear": 1, "quadratic": 2, "cubic": 3, "quartic": 4}
SIGNIFICANCE_SIGMA = 3.0


@dataclass(frozen=True)
class Measurement:
    value: float
    sigma: float = float("nan")
    limit: Optional[float] = None
    limit_kind: Optional[str] = None  # "lower" | "upper"
    note: str = ""

    def as_dict(self) -> dict:
        d = {"value": self.value, "sigma": self.sigma}
        if self.limit is not None:
            d.update(limit=self.limit, limit_kind=self.limit_kind)
        if self.note:
            d["note"] = self.note
        return d


# --- power-law fits --------------------------------------------------------------------

@dataclass
class PowerSeries:
    powers: np.ndarray  # mW
    values: np.ndarray  # rates (1/s) unless sigmas are given
    integration_times: np.ndarray  # s
    label: str = ""
    sigmas: Optional[np.ndarray] = None  # explicit 1-sigma errors; None -> Poisson counting

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.integration_times = np.broadcast_to(
            np.asarray(self.integration_times, dtype=float), self.powers.shape).copy()
        if self.sigmas is not None:
            self.sigmas = np.asarray(self.sigmas, dtype=float)
            if np.any(self.sigmas <= 0):
                raise ValueError("sigmas must be > 0")
        if self.values.shape != self.powers.shape:
            raise ValueError("powers and values must have the same length")
        if np.any(self.powers <= 0):
            raise ValueError("powers must be > 0")
        if np.unique(self.powers).size != self.powers.size:
            raise ValueError("powers must be distinct")


@dataclass
class PowerLawFit:
    terms: tuple
    coefficients: dict
    covariance: np.ndarray
    z_scores: dict
    significant: dict
    delta_statistic: dict
    statistic: float  # Poisson deviance, or chi^2 with explicit sigmas
    dof: int
    label: str = ""

    def sigma(self, term: str) -> float:
        i = self.terms.index(term)
        return float(np.sqrt(self.covariance[i, i]))

    def predict(self, powers):
        p = np.asarray(powers, dtype=float)
        return sum(self.coefficients[t] * p ** TERM_EXPONENTS[t] for t in self.terms)

    def summary(self) -> dict:
        return {
            "label": self.label,
            "terms": list(self.terms),
            "coefficients": {t: self.coefficients[t] for t in self.terms},
            "sigmas": {t: self.sigma(t) for t in self.terms},
            "z_scores": self.z_scores,
            "significant": self.significant,
            "statistic": self.statistic,
            "dof": self.dof,
        }


def _poisson_deviance(y, m):
    m = np.maximum(m, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(y > 0, y * np.log(y / m), 0.0)
    return float(2 * np.sum(t - (y - m)))


def _solve(series: PowerSeries, terms: Sequence[str]):
    """Non-negative ML fit; returns (beta, covariance, statistic)."""
    P = series.powers
    X = np.column_stack([P ** TERM_EXPONENTS[t] for t in terms])
    if series.sigmas is not None:
        y, A = series.values, X
        w = 1 / series.sigmas**2
        poisson = False
    else:
        t = series.integration_times
        y, A = series.values * t, X * t[:, None]
        w = 1 / np.maximum(y, 1.0)
        poisson = True
    scale = np.abs(A).max(axis=0)
    if np.any(scale == 0) or np.linalg.matrix_rank(A / scale) < len(terms):
        raise ValueError("degenerate design matrix")
    floor = max(1e-12 * np.abs(y).max(), 1e-6)  # expected counts; keeps weights finite
    beta = np.zeros(len(terms))
    for _ in range(200):
        sw = np.sqrt(w)
        res = lsq_linear(A / scale * sw[:, None], y * sw, bounds=(0, np.inf),
                         method="bvls", tol=1e-15)
        new = res.x / scale
        if not poisson:
            beta = new
            break
        converged = np.allclose(new, beta, rtol=1e-12, atol=0)
        beta = new
        w = 1 / np.maximum(A @ beta, floor)
        if converged:
            break
    m = A @ beta
    fisher = (A * w[:, None]).T @ A
    cov = np.linalg.pinv(fisher)
    stat = _poisson_deviance(y, m) if poisson else float(np.sum(w * (y - m) ** 2))
    return beta, cov, stat


def fit_power_law(series: PowerSeries, terms: Sequence[str] = ("const", "linear", "quadratic")) -> PowerLawFit:
    """Fit sum_j c_j P^e_j with c_j >= 0.

    Poisson weights use the model's expected counts (iterated to the Poisson
    maximum-likelihood point). Each term's significance is a likelihood-ratio test
    against the nested model without it, at 3 sigma (delta statistic > 9).
    """
    terms = tuple(terms)
    unknown = set(terms) - set(TERM_EXPONENTS)
    if unknown:
        raise ValueError(f"unknown terms {sorted(unknown)}")
    if series.powers.size < len(terms) + 1:
        raise ValueError("need at least (number of terms + 1) points")
    beta, cov, stat = _solve(series, terms)
    sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    z = {t: float(beta[i] / sig[i]) if sig[i] > 0 else float("inf") for i, t in enumerate(terms)}
    delta, significant = {}, {}
    for i, t in enumerate(terms):
        if len(terms) > 1:
            reduced = tuple(x for x in terms if x != t)
            _, _, stat_r = _solve(series, reduced)
            delta[t] = float(stat_r - stat)
        else:
            delta[t] = z[t] ** 2
        significant[t] = bool(delta[t] > SIGNIFICANCE_SIGMA**2)
    return PowerLawFit(terms, {t: float(b) for t, b in zip(terms, beta)}, cov, z, significant,
                       delta, stat, series.powers.size - len(terms), series.label)


def power_law_exponent(powers, values, sigmas, p_ref: Optional[float] = None):
    """Weighted fit of A (P / p_ref)^k. Returns (k, sigma_k, A)."""
    P = np.asarray(powers, dtype=float)
    y = np.asarray(values, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    p_ref = p_ref or float(np.exp(np.mean(np.log(P))))
    pos = y > 0
    k0, logA = np.polyfit(np.log(P[pos] / p_ref), np.log(y[pos]), 1)
    (A, k), cov = curve_fit(lambda p, A, k: A * (p / p_ref) ** k, P, y, p0=(np.exp(logA), k0),
                            sigma=s, absolute_sigma=True, maxfev=20000)
    return float(k), float(np.sqrt(cov[1, 1])), float(A)


# --- figures of merit ------------------------------------------------------------------

def car(dec: HistogramDecomposition, background_subtracted: bool = True) -> Measurement:
    """Coincidence-to-accidental ratio n_coinc / n_acc.

    With ``background_subtracted=False`` both peaks keep their share of the
    uncorrelated baseline, as a raw peak ratio would.
    """
    D = dec.duration
    K = max(dec.n_side_peaks, 1)
    if background_subtracted:
        c, a = dec.n_coinc, dec.n_acc
        sc, sa = dec.uncertainties["n_coinc"], dec.uncertainties["n_acc"]
    else:
        c, a = dec.coinc_peak_raw, dec.acc_peak_raw
        sc = np.sqrt(c * D) / D if D > 0 else 0.0
        sa = np.sqrt(a * D * K) / (K * D) if D > 0 else 0.0
    if a <= 0:
        upper_acc = sa * SIGNIFICANCE_SIGMA if sa > 0 else (3.0 / (K * D) if D > 0 else np.inf)
        lower = c / upper_acc if upper_acc > 0 else 0.0
        return Measurement(float("inf"), float("nan"), float(lower), "lower",
                           "CAR unbounded; lower limit reported")
    value = c / a
    rel = np.sqrt((sc / c) ** 2 + (sa / a) ** 2) if c > 0 else np.inf
    return Measurement(float(value), float(value * rel))


def g2_si(n_coinc: float, N_s: float, N_i: float, DC_s: float, DC_i: float,
          rep_rate: float) -> float:
    """Signal-idler cross-correlation with per-pulse normalisation (-> 1/mu)."""
    if N_s <= DC_s or N_i <= DC_i:
        raise ValueError("background exceeds counts")
    return n_coinc * rep_rate / ((N_s - DC_s) * (N_i - DC_i))


def infer_eta(powers, g2_values, sigmas=None) -> tuple[float, float]:
    """Generation efficiency from g2_si(P) = A / P^2 + B: eta = 1 / A (per pulse per mW^2)."""
    P = np.asarray(powers, dtype=float)
    g = np.asarray(g2_values, dtype=float)
    w = np.ones_like(g) if sigmas is None else 1 / np.asarray(sigmas, dtype=float) ** 2
    X = np.column_stack([P**-2, np.ones_like(P)])
    fisher = (X * w[:, None]).T @ X
    cov = np.linalg.inv(fisher)
    A, B = cov @ (X * w[:, None]).T @ g
    if sigmas is None:
        resid = g - X @ np.array([A, B])
        cov = cov * (resid @ resid) / max(P.size - 2, 1)
    eta = 1 / A
    return float(eta), float(np.sqrt(cov[0, 0]) / A**2)


def g2_heralded(N_s: float, N_s1: float, N_s2: float, N_s12: float) -> Measurement:
    """Heralded autocorrelation N_s,i1,i2 N_s / (N_s,i1 N_s,i2) from raw counts."""
    if N_s1 <= 0 or N_s2 <= 0 or N_s <= 0:
        return Measurement(float("nan"), float("nan"), float("inf"), "upper",
                           "insufficient statistics")
    norm = N_s / (N_s1 * N_s2)
    if N_s12 == 0:
        # ~95 % Poisson upper limit for zero observed events is 3 counts.
        return Measurement(0.0, float("nan"), 3.0 * norm, "upper", "no threefold coincidences")
    g = N_s12 * norm
    p1, p2, p3 = N_s1 / N_s, N_s2 / N_s, N_s12 / N_s
    rel = np.sqrt((1 - p3) / N_s12 + (1 - p1) / N_s1 + (1 - p2) / N_s2)
    return Measurement(float(g), float(g * rel))


def g2_nonheralded(n12: float, n1: float, n2: float, rep_rate: float, dc1: float = 0.0,
                   dc2: float = 0.0, duration: Optional[float] = None):
    """Unheralded idler autocorrelation n12 R_p / (n1 n2) from rates; returns (g2, purity).

    Dark rates, when given, are removed from the singles. ``duration`` enables
    Poisson uncertainties.
    """
    s1, s2 = n1 - dc1, n2 - dc2
    if s1 <= 0 or s2 <= 0:
        raise ValueError("zero denominator in g2_nonheralded")
    g = n12 * rep_rate / (s1 * s2)
    sigma = float("nan")
    if duration and n12 > 0:
        rel = np.sqrt(1 / (n12 * duration) + 1 / (n1 * duration) + 1 / (n2 * duration))
        sigma = g * rel
    return Measurement(float(g), float(sigma)), Measurement(float(g - 1), float(sigma))


def heralding_efficiency(n_coinc: float, N_s: float, DC_s: float,
                         idler_detector: Optional[DetectorSpec] = None) -> tuple[float, float]:
    """(raw Klyshko efficiency, value with the idler detector QE divided out)."""
    if N_s <= DC_s:
        raise ValueError("background exceeds counts")
    raw = n_coinc / (N_s - DC_s)
    if idler_detector is None:
        return raw, raw
    return raw, raw / idler_detector.quantum_efficiency


@dataclass
class SourceMetrics:
    car: float
    car_raw: float
    g2_si: float
    g2_heralded: float
    g2_nonheralded: float
    purity_from_g2: float
    heralding_efficiency_raw: float
    heralding_efficiency_corrected: float
    eta_inferred: float = float("nan")
    uncertainties: dict = field(default_factory=dict)


# --- closed-form rate model -------------------------------------------------------------

@dataclass(frozen=True)
class RateTerm:
    name: str
    exponent: int  # power of P
    location: str  # "coincidence" | "accidentals" | "coincidence+accidentals" | "uncorrelated"
    rate: float  # 1/s (per bin for uncorrelated terms)


@dataclass
class AnalyticPrediction:
    N_s: float
    N_i: float
    n_coinc: float
    n_acc: float
    n_unco: float
    car: float
    g2_si: float
    g2_H: float
    g2_NH: float
    terms: list


class _Pgf:
    """E[xs^(n + r_s) xi^(n + r_i)] for the pair number n and Raman counts r_s, r_i."""

    def __init__(self, model: SourceModel, power: float):
        self.means = mode_means(model, power)
        self.thermal = model.thermal
        self.rs = model.raman_signal_rate * power
        self.ri = model.raman_idler_rate * power

    def log(self, xs: float, xi: float) -> float:
        y = 1 - xs * xi
        if self.thermal:
            pairs = -np.sum(np.log1p(self.means * y))
        else:
            pairs = -float(self.means.sum()) * y
        return float(pairs - self.rs * (1 - xs) - self.ri * (1 - xi))

    def __call__(self, xs: float, xi: float) -> float:
        return float(np.exp(self.log(xs, xi)))

    def click(self, xs: float, xi: float) -> float:
        """1 - E[...]: probability that at least one photon is detected."""
        return float(-np.expm1(self.log(xs, xi)))


def _split_idlers(detectors: Mapping[str, DetectorSpec]):
    if IDLER1 in detectors and IDLER2 in detectors:
        return 0.5 * detectors[IDLER1].efficiency, 0.5 * detectors[IDLER2].efficiency
    t = 0.5 * detectors[IDLER].efficiency
    return t, t


def heralded_probabilities(model: SourceModel, power: float, eta_s: float, t1: float, t2: float):
    """Per-pulse click probabilities (P_s, P_s1, P_s2, P_s12) with click detectors.

    ``t1``/``t2`` are the probabilities that an idler photon is routed to and
    detected by detector 1/2. Dark counts are ignored.
    """
    G = _Pgf(model, power)
    xs = 1 - eta_s
    x1, x2, x12 = 1 - t1, 1 - t2, 1 - t1 - t2
    Ps = G.click(xs, 1)
    Ps1 = 1 - G(xs, 1) - G(1, x1) + G(xs, x1)
    Ps2 = 1 - G(xs, 1) - G(1, x2) + G(xs, x2)
    Ps12 = (1 - G(1, x1) - G(1, x2) + G(1, x12)) - (G(xs, 1) - G(xs, x1) - G(xs, x2) + G(xs, x12))
    return Ps, Ps1, Ps2, Ps12


def g2_heralded_theory(model: SourceModel, power: float, eta_s: float, t1: float, t2: float) -> float:
    Ps, Ps1, Ps2, Ps12 = heralded_probabilities(model, power, eta_s, t1, t2)
    return Ps12 * Ps / (Ps1 * Ps2)


def g2_nonheralded_theory(model: SourceModel, power: float, t1: float, t2: float) -> float:
    G = _Pgf(model, power)
    P1, P2 = G.click(1, 1 - t1), G.click(1, 1 - t2)
    P12 = 1 - G(1, 1 - t1) - G(1, 1 - t2) + G(1, 1 - t1 - t2)
    return P12 / (P1 * P2)


def analytic_model(model: SourceModel, detectors: Mapping[str, DetectorSpec], power: float,
                   bin_width_ps: float = 1400.0) -> AnalyticPrediction:
    """Closed-form expectations for a run with detectors 's' and 'i' (or 'i1'/'i2').

    Singles, coincidences and accidentals use exact per-pulse click probabilities
    from the probability generating function of the photon numbers. ``terms``
    holds the first-order contribution of every event class of the delay
    histogram with its power law and location. Dead time is neglected.
    """
    Rp = model.pump.repetition_rate
    ds = detectors[SIGNAL]
    if IDLER in detectors:
        di = detectors[IDLER]
        Ti, DCi = di.efficiency, di.dark_count_rate
    else:
        Ti = 0.5 * (detectors[IDLER1].efficiency + detectors[IDLER2].efficiency)
        DCi = detectors[IDLER1].dark_count_rate + detectors[IDLER2].dark_count_rate
    Ts, DCs = ds.efficiency, ds.dark_count_rate
    G = _Pgf(model, power)
    Ps = G.click(1 - Ts, 1)
    Pi = G.click(1, 1 - Ti)
    Psi = 1 - G(1 - Ts, 1) - G(1, 1 - Ti) + G(1 - Ts, 1 - Ti)
    N_s = DCs + Rp * Ps
    N_i = DCi + Rp * Pi
    n_coinc = Rp * Psi
    n_acc = Rp * Ps * Pi
    w = bin_width_ps * 1e-12
    n_unco = w * (DCs * N_i + DCi * N_s - DCs * DCi)

    mu = float(np.sum(mode_means(model, power)))
    rs, ri = G.rs, G.ri
    terms = [
        RateTerm("pair", 2, "coincidence", Rp * Ts * Ti * mu),
        RateTerm("param-param", 4, "accidentals", Rp * Ts * Ti * mu**2),
        RateTerm("param-DC", 2, "uncorrelated", w * Rp * mu * (DCs * Ti + DCi * Ts)),
        RateTerm("DC-DC", 0, "uncorrelated", w * DCs * DCi),
        RateTerm("param-Raman", 3, "coincidence+accidentals", Rp * Ts * Ti * mu * (rs + ri)),
        RateTerm("Raman-Raman", 2, "coincidence+accidentals", Rp * Ts * Ti * rs * ri),
        RateTerm("Raman-DC", 1, "uncorrelated", w * Rp * (DCs * Ti * ri + DCi * Ts * rs)),
    ]
    t1, t2 = _split_idlers(detectors)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_si = Psi / (Ps * Pi) if Ps * Pi > 0 else float("nan")
        g_h = g2_heralded_theory(model, power, Ts, t1, t2) if Ps > 0 else float("nan")
        g_nh = g2_nonheralded_theory(model, power, t1, t2) if mu + ri > 0 else float("nan")
    return AnalyticPrediction(N_s, N_i, n_coinc, n_acc, n_unco,
                              n_coinc / n_acc if n_acc > 0 else float("inf"),
                              g_si, g_h, g_nh, terms)
