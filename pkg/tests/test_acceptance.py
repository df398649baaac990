"""The eleven acceptance criteria, run once through the full replay.

Each test re-derives its verdict from the raw measurements in the replay report
at the stated tolerances, prints one PASS/FAIL line and asserts.
"""
import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fwmlab.replay import run_replay

TITLES = {
    1: "phase matching at 4 bar, 2-5 bar tuning, < 5 s",
    2: "JSA purity in [0.75, 0.90], SVD = trace formula, < 10 s",
    3: "singles: quadratic, linear term null, c_s within x2 of 0.66",
    4: "n_coinc ~ P^2, n_acc ~ P^4, C_a/C_c = eta within 15 %",
    5: "CAR shape, CAR(30 mW) vs 442, low-power saturation",
    6: "heralded g2 in [0.001, 0.003], exponent 2 +- 0.2, Raman drop",
    7: "non-heralded g2 - 1 = purity within 0.05 for 3 spectra",
    8: "corrected heralding efficiency in [0.24, 0.33]",
    9: "correlator equals brute-force oracles on 200 instances",
    10: "throughput >= 1e7 tags/s, replay < 15 min",
    11: "byte-identical outputs across thread counts",
}


@pytest.fixture(scope="module")
def report():
    return run_replay()


def crit(report, n):
    return next(c for c in report.criteria if c.number == n)


def check(report, n, failures):
    c = crit(report, n)
    status = "PASS" if not failures and c.passed else "FAIL"
    detail = "" if status == "PASS" else "  <- " + "; ".join(failures or [c.line()])
    line = f"[{status}] {n:2d}. {TITLES[n]}{detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert not failures, failures
    assert c.passed, c.line()


def measured(report, n, name):
    return next(ch.measured for ch in crit(report, n).checks if ch.name == name)


def rows_by_power(report):
    return {r["power_mW"]: r for r in report.sweep_rows}


def test_01_phase_matching(report):
    f = []
    lam_s, lam_i = measured(report, 1, "signal_nm"), measured(report, 1, "idler_nm")
    det = measured(report, 1, "detuning_THz")
    if abs(lam_s - 770) > 15:
        f.append(f"signal {lam_s:.2f} nm")
    if abs(lam_i - 1570) > 30:
        f.append(f"idler {lam_i:.2f} nm")
    if abs(det - 99.3) > 2:
        f.append(f"detuning {det:.2f} THz")
    idl = [p["idler_nm"] for p in crit(report, 1).notes["sweep"]]
    if not (min(idl) <= 1530 and max(idl) >= 1625):
        f.append(f"sweep covers {min(idl):.1f}-{max(idl):.1f} nm")
    if measured(report, 1, "runtime_s") >= 5:
        f.append("runtime")
    check(report, 1, f)


def test_02_purity(report):
    f = []
    p = measured(report, 2, "purity")
    if not 0.75 <= p <= 0.90:
        f.append(f"purity {p:.4f}")
    if measured(report, 2, "svd_minus_trace") > 1e-9:
        f.append("SVD vs trace")
    if crit(report, 2).notes["resolution"] != [256, 256] or measured(report, 2, "runtime_s") >= 10:
        f.append("grid/runtime")
    check(report, 2, f)


def test_03_power_law_closure(report):
    f = []
    fits = crit(report, 3).notes["fits"]
    for key in ("Ns", "Ni"):
        if fits[key]["significant"]["linear"]:
            f.append(f"{key} linear term significant")
        if measured(report, 3, f"{key}_quadratic_shift_sigma") > 3:
            f.append(f"{key} quadratic coefficient unstable")
    c_s = fits["Ns"]["coefficients"]["quadratic"]
    if not 0.66 / 2 <= c_s <= 0.66 * 2:
        f.append(f"c_s {c_s:.3f}")
    if sorted(rows_by_power(report)) != [10, 20, 30, 60, 100]:
        f.append("power grid")
    if min(r["n_pulses"] for r in report.sweep_rows) < 2e8:
        f.append("pulses per point")
    if crit(report, 3).elapsed_s >= 600:
        f.append("runtime")
    check(report, 3, f)


def test_04_decomposition(report):
    f = []
    ex = report.sweep_fits["exponents"]
    if abs(ex["ncoinc"]["exponent"] - 2.0) > 0.15:
        f.append(f"n_coinc slope {ex['ncoinc']['exponent']:.3f}")
    if abs(ex["nacc"]["exponent"] - 4.0) > 0.25:
        f.append(f"n_acc slope {ex['nacc']['exponent']:.3f}")
    ratio = report.sweep_fits["C_a"] / report.sweep_fits["C_c"]
    if abs(ratio / 2.6e-6 - 1) > 0.15:
        f.append(f"C_a/C_c {ratio:.3e}")
    if abs(7.8e-8 / 3.1e-2 / 2.6e-6 - 1) > 0.15:
        f.append("published constants")
    check(report, 4, f)


def test_05_car(report):
    f = []
    fits = report.sweep_fits
    Cc, Ca = fits["C_c"], fits["C_a"]
    rows = rows_by_power(report)
    for P, r in rows.items():
        if P < 20:
            continue
        shape = Cc / (Ca * P**2)
        if abs(r["CAR"] - shape) > 3 * r["CAR_err"]:
            f.append(f"CAR({P:g}) {r['CAR']:.1f} vs {shape:.1f}")
    r30 = rows[30.0]
    target = 3.1e-2 / (7.8e-8 * 30**2)
    if abs(r30["CAR"] - target) > 3 * r30["CAR_err"]:
        f.append(f"CAR(30) {r30['CAR']:.1f} +- {r30['CAR_err']:.1f} vs {target:.1f}")
    ex = fits["exponents"]["CAR"]
    if abs(ex["exponent"] + 2.0) > 0.15 or 10.0 in ex["powers_mW"]:
        f.append(f"CAR slope {ex['exponent']:.3f}")
    r10 = rows[10.0]
    extrapolated = ex["amplitude"] * (10.0 / ex["p_ref_mW"]) ** ex["exponent"]
    if not r10["CAR_raw"] + 3 * r10["CAR_raw_err"] < extrapolated:
        f.append(f"CAR(10) {r10['CAR_raw']:.0f} not below {extrapolated:.0f}")
    check(report, 5, f)


def _exponent(notes_block, powers):
    from fwmlab.estimators import power_law_exponent
    return power_law_exponent(powers, notes_block["g2H"], notes_block["g2H_err"])


def test_06_heralded_g2(report):
    f = []
    notes = crit(report, 6).notes
    P = notes["powers_mW"]
    g20 = notes["off"]["g2H"][P.index(20.0)]
    if not 0.001 <= g20 <= 0.003:
        f.append(f"g2H(20 mW) {g20:.5f}")
    k_off, s_off, _ = _exponent(notes["off"], P)
    k_on, s_on, _ = _exponent(notes["raman"], P)
    if abs(k_off - 2.0) > 0.2:
        f.append(f"exponent {k_off:.3f}")
    if not k_on + 3 * s_on < 2.0:
        f.append(f"Raman exponent {k_on:.3f} +- {s_on:.3f} not below 2")
    if not k_off - k_on > 3 * np.hypot(s_on, s_off):
        f.append(f"drop {k_off - k_on:.4f} not significant")
    check(report, 6, f)


def test_07_nonheralded_g2(report):
    f = []
    notes = crit(report, 7).notes
    purity = measured(report, 2, "purity")
    targets = {"(1)": 1.0, "(0.5,0.5)": 0.5, "jsa": purity}
    if len(notes) < 3:
        f.append("fewer than three spectra")
    for key, t in targets.items():
        g = notes[key]["g2NH"]
        if abs(g - 1 - t) > 0.05:
            f.append(f"{key}: g2 - 1 = {g - 1:.4f} vs {t:.4f}")
    check(report, 7, f)


def test_08_heralding_efficiency(report):
    v = rows_by_power(report)[20.0]["herald_corr"]
    check(report, 8, [] if 0.24 <= v <= 0.33 else [f"corrected {v:.4f}"])


def test_09_correlator_oracles(report):
    f = [ch.name for ch in crit(report, 9).checks if ch.measured != 0]
    check(report, 9, f)


def test_10_performance(report):
    f = []
    rate = measured(report, 10, "cross_histogram_tags_per_s")
    if rate < 1e7:
        f.append(f"{rate:.3g} tags/s")
    if report.elapsed_s >= 900:
        f.append(f"replay {report.elapsed_s:.0f} s")
    check(report, 10, f)


def test_11_determinism(report):
    hashes = set(crit(report, 11).notes["sha256"].values())
    check(report, 11, [] if len(hashes) == 1 else ["outputs differ across thread counts"])
