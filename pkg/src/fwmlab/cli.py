"""Command-line entry point: fwmlab <subcommand> [--config FILE] [--out DIR] ...

Every artifact embeds the config hash and seed. Wall-clock timings go to a
separate timings.json so that all other outputs are byte-identical across
re-runs and thread counts.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import REFERENCE_SCENARIO, ConfigError, load_config
from .correlator import cross_histogram, decompose
from .dispersion import NoPhaseMatchError, sweep_to_csv
from .estimators import analytic_model
from .io import atomic_write_text, write_json
from .jsa import export_jsa
from .pipeline import (analyze_run, compute_jsa, fit_sweep, phase_match, run_sweep, source_model,
                       sweep_csv)
from .ptag import PtagFormatError, read_ptag, write_ptag
from .source import PS_PER_S, simulate_run


class CliError(Exception):
    pass


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _stamp(cfg) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed, "scenario": cfg.name}


def _comment(cfg) -> str:
    return f"config_hash={cfg.config_hash} seed={cfg.seed}"


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("FWMLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"FWMLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def _read_streams(input_dir):
    d = Path(input_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"input directory not found: {d}")
    files = sorted(d.glob("*.ptag"))
    if len(files) not in (2, 3):
        raise CliError(f"expected 2 or 3 .ptag files in {d}, found {len(files)}")
    streams = [read_ptag(f) for f in files]
    return sorted(streams, key=lambda s: s.channel_id)


def _provenance(streams) -> list:
    keys = ("channel", "seed", "config_hash", "power_mW", "n_pulses")
    return [{k: x.metadata.get(k) for k in keys} for x in streams]


def cmd_phase_match(args, cfg, out: Path) -> dict:
    sol, sweep = phase_match(cfg)
    atomic_write_text(out / "phase_match.csv", f"# {_comment(cfg)}\n" + sweep_to_csv(sweep))
    write_json(out / "phase_match.json", {
        **_stamp(cfg),
        "pressure_bar": cfg.gas.pressure / 1e5,
        "signal_nm": sol.signal_wavelength * 1e9,
        "idler_nm": sol.idler_wavelength * 1e9,
        "detuning_THz": sol.detuning_hz / 1e12,
        "residual_mismatch_per_m": sol.residual_mismatch,
    })
    _log(args, f"4-bar point: signal {sol.signal_wavelength * 1e9:.2f} nm, "
               f"idler {sol.idler_wavelength * 1e9:.2f} nm, detuning {sol.detuning_hz / 1e12:.2f} THz")
    return {}


def cmd_jsa(args, cfg, out: Path) -> dict:
    res = compute_jsa(cfg)
    export_jsa(res.grid, res.spectrum, out, extra_meta=_stamp(cfg), comment=_comment(cfg))
    _log(args, f"purity {res.spectrum.purity:.4f}, Schmidt number {res.spectrum.schmidt_number:.3f}")
    return {}


def cmd_simulate(args, cfg, out: Path) -> dict:
    model = source_model(cfg)
    sim = cfg.simulation
    streams = simulate_run(model, cfg.detectors, sim.power_mW, sim.n_pulses, sim.idler_beamsplitter,
                           cfg.seed, threads=_threads(args), config_hash=cfg.config_hash)
    for s in streams:
        write_ptag(out / f"{s.metadata['channel']}.ptag", s)
        _log(args, f"channel {s.metadata['channel']}: {len(s)} tags ({s.rate:.1f} /s)")
    return {}


def cmd_correlate(args, cfg, out: Path) -> dict:
    streams = _read_streams(args.input)
    c = cfg.correlator
    period_ps = int(round(PS_PER_S / cfg.pump.repetition_rate))
    s = streams[0]
    idler = np.sort(np.concatenate([x.timestamps for x in streams[1:]]), kind="stable")
    duration = max(x.duration for x in streams)
    hist = cross_histogram(s.timestamps, idler, c.bin_width_ps, c.range_ps, period_ps, duration)
    dec = decompose(hist, c.peak_half_width_ps, c.n_side_peaks)
    atomic_write_text(out / "histogram.csv", f"# {_comment(cfg)}\n" + hist.to_csv())
    write_json(out / "decomposition.json", {
        **_stamp(cfg),
        "tag_counts": {str(x.channel_id): len(x) for x in streams},
        "input_streams": _provenance(streams),
        "histogram_total": int(hist.counts.sum()),
        "n_coinc": dec.n_coinc, "n_acc": dec.n_acc, "n_unco": dec.n_unco,
        "uncertainties": dec.uncertainties,
        "coinc_peak_raw": dec.coinc_peak_raw, "acc_peak_raw": dec.acc_peak_raw,
        "side_peak_rates": dec.side_peak_rates, "notes": dec.notes, "duration_s": dec.duration,
    })
    _log(args, f"n_coinc {dec.n_coinc:.4g}/s, n_acc {dec.n_acc:.4g}/s, n_unco {dec.n_unco:.4g}/s per bin")
    return {}


def cmd_analyze(args, cfg, out: Path) -> dict:
    streams = _read_streams(args.input)
    res = analyze_run(streams, cfg)
    m = dict(res.metrics)
    P = m.get("power_mW")
    payload = {**_stamp(cfg), "input_streams": _provenance(streams), "metrics": m}
    dets = cfg.detectors
    if P is not None and np.isfinite(P) and "i" in dets:
        a = analytic_model(source_model(cfg), dets, P, cfg.correlator.bin_width_ps)
        payload["analytic"] = {
            "Ns": a.N_s, "Ni": a.N_i, "ncoinc": a.n_coinc, "nacc": a.n_acc, "nunco": a.n_unco,
            "CAR": a.car, "g2si": a.g2_si, "g2H": a.g2_H, "g2NH": a.g2_NH,
            "terms": [{"name": t.name, "exponent": t.exponent, "location": t.location, "rate": t.rate}
                      for t in a.terms],
        }
    write_json(out / "metrics.json", payload)
    _log(args, f"CAR {m['CAR']:.4g}, g2si {m['g2si']:.4g}, herald (corrected) {m['herald_corr']:.4g}")
    return {}


def cmd_sweep(args, cfg, out: Path) -> dict:
    model = source_model(cfg)
    points = out / "points"

    def on_point(k, res):
        write_json(points / f"point_{k:02d}.json", {**_stamp(cfg), "index": k, "metrics": res.metrics})
        _log(args, f"point {k}: P = {res.metrics['power_mW']:g} mW, CAR {res.metrics['CAR']:.4g}")

    results = run_sweep(cfg, model, threads=_threads(args), on_point=on_point)
    rows = [r.metrics for r in results]
    atomic_write_text(out / "sweep.csv", sweep_csv(rows, _comment(cfg)))
    write_json(out / "sweep_fits.json", {**_stamp(cfg), **fit_sweep(rows)})
    return {}


def cmd_replay(args, cfg, out: Path) -> dict:
    from .replay import run_replay

    report = run_replay(cfg, threads=_threads(args), log=lambda s: _log(args, s))
    write_json(out / "replay_report.json", {**_stamp(cfg), **report.as_dict()})
    atomic_write_text(out / "sweep.csv", sweep_csv(report.sweep_rows, _comment(cfg)))
    for line in report.lines():
        print(line)
    print(f"{sum(c.passed for c in report.criteria)}/{len(report.criteria)} criteria passed "
          f"in {report.elapsed_s:.1f} s")
    return {"exit": 0 if report.passed else 1}


COMMANDS = {
    "phase-match": (cmd_phase_match, "phase-matched wavelengths and the pressure tuning curve"),
    "jsa": (cmd_jsa, "joint spectral amplitude, Schmidt spectrum and purity"),
    "simulate": (cmd_simulate, "Monte-Carlo time tags written as PTAG files"),
    "correlate": (cmd_correlate, "delay histogram and its decomposition from PTAG files"),
    "analyze": (cmd_analyze, "figures of merit from PTAG files, with the analytic prediction"),
    "sweep": (cmd_sweep, "power sweep: per-point metrics, sweep CSV and power-law fits"),
    "replay-paper": (cmd_replay, "run the reference scenario and report every acceptance check"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fwmlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="scenario JSON (default: the packaged reference scenario)")
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads (env FWMLAB_THREADS)")
        p.add_argument("--power-mw", type=float, default=None, help="override simulate.power_mW")
        p.add_argument("--quiet", action="store_true", help="no progress output")
        if name in ("correlate", "analyze"):
            p.add_argument("--input", required=True, help="directory holding the PTAG files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config or REFERENCE_SCENARIO, seed=args.seed, power_mW=args.power_mw)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        result = fn(args, cfg, out)
        write_json(out / "timings.json", {"command": args.command, "wall_s": time.perf_counter() - t0,
                                          "threads": _threads(args)})
    except ConfigError as e:
        print(f"config error at {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PtagFormatError, CliError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NoPhaseMatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return int(result.get("exit", 0))


if __name__ == "__main__":
    sys.exit(main())
