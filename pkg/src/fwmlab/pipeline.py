"""Glue between the simulator, the correlator and the estimators: single-run
analysis, power sweeps with fits, and the spectral (phase-matching / JSA) runs."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .correlator import DelayHistogram, HistogramDecomposition, cross_histogram, decompose, threefold, twofold
from .dispersion import PhaseMatchSolution, pressure_sweep, solve_phase_match
from .estimators import (PowerSeries, car, fit_power_law, g2_heralded, g2_nonheralded, g2_si,
                         heralding_efficiency, infer_eta, power_law_exponent)
from .jsa import JsaGrid, SchmidtSpectrum, apply_filters, build_jsa, default_windows, schmidt_decompose
from .source import IDLER, IDLER1, IDLER2, PS_PER_S, SIGNAL, DetectorSpec, SourceModel, TagStream, simulate_run

SWEEP_COLUMNS = ["power_mW", "Ns", "Ni", "ncoinc", "nacc", "nunco", "CAR", "g2si", "g2H", "g2NH",
                 "herald_raw", "herald_corr"]
EXTRA_COLUMNS = ["CAR_raw", "CAR_raw_err", "duration_s", "n_pulses"]


def derive_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


# --- spectral runs -----------------------------------------------------------------------

def phase_match(cfg: ScenarioConfig):
    """(solution at the configured pressure, pressure sweep)."""
    kw = {"omega_min_detuning": 2 * np.pi * cfg.min_detuning_THz * 1e12}
    sol = solve_phase_match(cfg.pump, cfg.fiber, cfg.gas, **kw)
    sweep = pressure_sweep(cfg.pump, cfg.fiber, cfg.gas, [p * 1e5 for p in cfg.pressures_bar], **kw)
    return sol, sweep


@dataclass
class JsaResult:
    solution: PhaseMatchSolution
    grid: JsaGrid  # filtered when the config asks for filters
    unfiltered: JsaGrid
    spectrum: SchmidtSpectrum


def compute_jsa(cfg: ScenarioConfig) -> JsaResult:
    s = cfg.jsa
    sol = solve_phase_match(cfg.pump, cfg.fiber, cfg.gas, include_nonlinear=s.include_nonlinear,
                            omega_min_detuning=2 * np.pi * cfg.min_detuning_THz * 1e12)
    windows = default_windows(sol, cfg.signal_filter, cfg.idler_filter, s.window_filter_widths)
    raw = build_jsa(cfg.pump, cfg.fiber, cfg.gas, *windows, resolution=s.resolution,
                    include_nonlinear=s.include_nonlinear, chirp=s.chirp_s2)
    grid = apply_filters(raw, cfg.signal_filter, cfg.idler_filter) if s.apply_filters else raw
    return JsaResult(sol, grid, raw, schmidt_decompose(grid))


def schmidt_coefficients(cfg: ScenarioConfig) -> tuple:
    if cfg.source.schmidt_coefficients is not None:
        return tuple(cfg.source.schmidt_coefficients)
    return tuple(compute_jsa(cfg).spectrum.coefficients)


def source_model(cfg: ScenarioConfig) -> SourceModel:
    return cfg.source_model(schmidt_coefficients(cfg))


# --- single-run analysis ----------------------------------------------------------------

@dataclass
class RunAnalysis:
    metrics: dict
    histogram: DelayHistogram
    decomposition: HistogramDecomposition


def _streams_by_name(streams: Sequence[TagStream]) -> dict:
    names = [s.metadata.get("channel") for s in streams]
    if all(n is not None for n in names):
        return dict(zip(names, streams))
    if len(streams) == 2:
        return {SIGNAL: streams[0], IDLER: streams[1]}
    if len(streams) == 3:
        return {SIGNAL: streams[0], IDLER1: streams[1], IDLER2: streams[2]}
    raise ValueError("expected 2 (s, i) or 3 (s, i1, i2) streams")


def _ratio_err(value, *pairs):
    terms = [(s / x) ** 2 for x, s in pairs if x]
    return float(abs(value) * np.sqrt(sum(terms))) if np.isfinite(value) else float("nan")


def analyze_run(streams: Sequence[TagStream], cfg: ScenarioConfig,
                detectors: Optional[Mapping[str, DetectorSpec]] = None,
                repetition_rate: Optional[float] = None) -> RunAnalysis:
    """Histogram decomposition and every figure of merit for one run.

    With three channels (s, i1, i2) the idler singles and the histogram use the
    merged idler tags, and the heralded / non-heralded g2 are evaluated too.
    """
    det = dict(detectors or cfg.detectors)
    ch = _streams_by_name(streams)
    Rp = repetition_rate or cfg.pump.repetition_rate
    period_ps = int(round(PS_PER_S / Rp))
    D = max(s.duration for s in streams)
    if D <= 0:
        raise ValueError("streams have zero duration")
    c = cfg.correlator
    s = ch[SIGNAL]
    split = IDLER1 in ch
    if split:
        ti = np.sort(np.concatenate([ch[IDLER1].timestamps, ch[IDLER2].timestamps]), kind="stable")
        DCi = det[IDLER1].dark_count_rate + det[IDLER2].dark_count_rate
        idler_det = det[IDLER1]
    else:
        ti = ch[IDLER].timestamps
        DCi = det[IDLER].dark_count_rate
        idler_det = det[IDLER]
    DCs = det[SIGNAL].dark_count_rate

    hist = cross_histogram(s.timestamps, ti, c.bin_width_ps, c.range_ps, period_ps, D)
    dec = decompose(hist, c.peak_half_width_ps, c.n_side_peaks)
    Ns, Ni = len(s) / D, ti.size / D
    sNs, sNi = np.sqrt(len(s)) / D, np.sqrt(ti.size) / D
    sc = dec.uncertainties["n_coinc"]
    m = {
        "power_mW": s.metadata.get("power_mW", float("nan")),
        "duration_s": D,
        "n_pulses": s.metadata.get("n_pulses", int(round(D * Rp))),
        "Ns": Ns, "Ns_err": sNs, "Ni": Ni, "Ni_err": sNi,
        "ncoinc": dec.n_coinc, "ncoinc_err": sc,
        "nacc": dec.n_acc, "nacc_err": dec.uncertainties["n_acc"],
        "nunco": dec.n_unco, "nunco_err": dec.uncertainties["n_unco"],
    }
    r = car(dec)
    m["CAR"], m["CAR_err"] = r.value, r.sigma
    if r.limit is not None:
        m["CAR_lower_limit"] = r.limit
    r = car(dec, background_subtracted=False)
    m["CAR_raw"], m["CAR_raw_err"] = r.value, r.sigma

    try:
        g = g2_si(dec.n_coinc, Ns, Ni, DCs, DCi, Rp)
        m["g2si"] = g
        m["g2si_err"] = _ratio_err(g, (dec.n_coinc, sc), (Ns - DCs, sNs), (Ni - DCi, sNi))
        raw, corr = heralding_efficiency(dec.n_coinc, Ns, DCs, idler_det)
        m["herald_raw"], m["herald_corr"] = raw, corr
        m["herald_raw_err"] = _ratio_err(raw, (dec.n_coinc, sc), (Ns - DCs, sNs))
        m["herald_corr_err"] = m["herald_raw_err"] / idler_det.quantum_efficiency
    except ValueError:
        for k in ("g2si", "herald_raw", "herald_corr"):
            m[k] = m[k + "_err"] = float("nan")

    m["g2H"] = m["g2H_err"] = m["g2NH"] = m["g2NH_err"] = float("nan")
    if split:
        w = c.coincidence_window_ps
        i1, i2 = ch[IDLER1], ch[IDLER2]
        n_s, n_s1, n_s2, n_s12 = threefold(s.timestamps, i1.timestamps, i2.timestamps, w)
        gh = g2_heralded(n_s, n_s1, n_s2, n_s12)
        m.update(N_s=n_s, N_s_i1=n_s1, N_s_i2=n_s2, N_s_i1_i2=n_s12,
                 g2H=gh.value, g2H_err=gh.sigma)
        if gh.limit is not None:
            m["g2H_upper_limit"] = gh.limit
        n12 = twofold(i1.timestamps, i2.timestamps, w)
        m["N_i1_i2"] = n12
        try:
            gnh, pur = g2_nonheralded(n12 / D, len(i1) / D, len(i2) / D, Rp,
                                      det[IDLER1].dark_count_rate, det[IDLER2].dark_count_rate, D)
            m.update(g2NH=gnh.value, g2NH_err=gnh.sigma, purity_g2=pur.value)
        except ValueError:
            pass
    return RunAnalysis(m, hist, dec)


# --- power sweeps -----------------------------------------------------------------------

def run_sweep(cfg: ScenarioConfig, model: SourceModel, powers: Optional[Sequence[float]] = None,
              pulses: Optional[int | Sequence[int]] = None,
              detectors: Optional[Mapping[str, DetectorSpec]] = None,
              beamsplitter: Optional[bool] = None, seed: Optional[int] = None, threads: int = 1,
              on_point: Optional[Callable[[int, RunAnalysis], None]] = None) -> list[RunAnalysis]:
    """Simulate and analyse every power point.

    Point k uses a seed derived from (seed, k), so points can run in parallel
    and results do not depend on ``threads``. Results come back in input order.
    """
    powers = list(cfg.sweep.powers_mW if powers is None else powers)
    if pulses is None:
        pulses = cfg.sweep.pulses_per_point
    pulses = [int(pulses)] * len(powers) if np.isscalar(pulses) else [int(n) for n in pulses]
    det = dict(detectors or cfg.detectors)
    bs = cfg.simulation.idler_beamsplitter if beamsplitter is None else beamsplitter
    seed = cfg.seed if seed is None else seed

    def point(k):
        streams = simulate_run(model, det, powers[k], pulses[k], bs, derive_seed(seed, 2, k),
                               threads=1, config_hash=cfg.config_hash)
        res = analyze_run(streams, cfg, det)
        if on_point is not None:
            on_point(k, res)
        return res

    if threads > 1 and len(powers) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(point, range(len(powers))))
    return [point(k) for k in range(len(powers))]


def _series(rows, key, label, poisson=False):
    P = np.array([r["power_mW"] for r in rows], dtype=float)
    v = np.array([r[key] for r in rows], dtype=float)
    D = np.array([r["duration_s"] for r in rows], dtype=float)
    if poisson:
        return PowerSeries(P, v, D, label)
    s = np.array([r[key + "_err"] for r in rows], dtype=float)
    return PowerSeries(P, v, D, label, sigmas=np.where(s > 0, s, np.nan))


def _finite(series: PowerSeries) -> PowerSeries:
    ok = np.isfinite(series.values)
    if series.sigmas is not None:
        ok &= np.isfinite(series.sigmas)
    return PowerSeries(series.powers[ok], series.values[ok], series.integration_times[ok],
                       series.label, None if series.sigmas is None else series.sigmas[ok])


SWEEP_FITS = {
    "Ns": (("const", "linear", "quadratic"), True),
    "Ni": (("const", "linear", "quadratic"), True),
    "ncoinc": (("quadratic", "cubic"), False),
    "nacc": (("quadratic", "cubic", "quartic"), False),
    "nunco": (("const", "linear", "quadratic"), False),
}


def fit_sweep(rows: Sequence[dict]) -> dict:
    """Power-law fits and exponents for a finished sweep. Failed fits are reported, not raised."""
    out = {"fits": {}, "exponents": {}}
    for key, (terms, poisson) in SWEEP_FITS.items():
        try:
            out["fits"][key] = fit_power_law(_finite(_series(rows, key, key, poisson)), terms).summary()
        except (ValueError, np.linalg.LinAlgError) as e:
            out["fits"][key] = {"error": str(e)}
    try:
        cc = fit_power_law(_finite(_series(rows, "ncoinc", "ncoinc")), ("quadratic",))
        ca = fit_power_law(_finite(_series(rows, "nacc", "nacc")), ("quartic",))
        C_c, C_a = cc.coefficients["quadratic"], ca.coefficients["quartic"]
        out["C_c"], out["C_c_err"] = C_c, cc.sigma("quadratic")
        out["C_a"], out["C_a_err"] = C_a, ca.sigma("quartic")
        out["C_a_over_C_c"] = C_a / C_c
        out["C_a_over_C_c_err"] = C_a / C_c * np.hypot(out["C_a_err"] / C_a, out["C_c_err"] / C_c)
    except (ValueError, ZeroDivisionError, np.linalg.LinAlgError) as e:
        out["C_error"] = str(e)

    P = np.array([r["power_mW"] for r in rows], dtype=float)
    lowest = P == P.min()
    for key, skip_lowest in (("ncoinc", False), ("nacc", False), ("CAR", True), ("g2H", False)):
        v = np.array([r.get(key, np.nan) for r in rows], dtype=float)
        s = np.array([r.get(key + "_err", np.nan) for r in rows], dtype=float)
        ok = np.isfinite(v) & np.isfinite(s) & (s > 0) & (v > 0)
        if skip_lowest:
            ok &= ~lowest
        if ok.sum() < 3:
            continue
        k, sk, A = power_law_exponent(P[ok], v[ok], s[ok])
        out["exponents"][key] = {"exponent": k, "sigma": sk, "amplitude": A,
                                 "p_ref_mW": float(np.exp(np.mean(np.log(P[ok])))),
                                 "powers_mW": P[ok].tolist()}
    g = np.array([r.get("g2si", np.nan) for r in rows], dtype=float)
    gs = np.array([r.get("g2si_err", np.nan) for r in rows], dtype=float)
    ok = np.isfinite(g) & np.isfinite(gs) & (gs > 0)
    if ok.sum() >= 3:
        eta, seta = infer_eta(P[ok], g[ok], gs[ok])
        out["eta_inferred"], out["eta_inferred_err"] = eta, seta
    return out


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if not np.isfinite(x) and np.isnan(x) else repr(x)


def sweep_csv(rows: Sequence[dict], header_comment: str = "") -> str:
    cols = SWEEP_COLUMNS + [c + "_err" for c in SWEEP_COLUMNS[1:]] + EXTRA_COLUMNS
    lines = [f"# {header_comment}"] if header_comment else []
    lines.append(",".join(cols))
    for r in rows:
        lines.append(",".join(_fmt(r.get(c, float("nan"))) for c in cols))
    return "\n".join(lines) + "\n"
