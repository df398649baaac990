"""Heralded and non-heralded g2 from simulation, next to the closed-form values.

Idler light is split on a 50:50 beamsplitter onto two detectors. Default
detectors are lossless and dark-free so the statistics are not diluted.
"""
import argparse
from dataclasses import replace

import numpy as np

from fwmlab.config import paper_replay_config
from fwmlab.correlator import threefold, twofold
from fwmlab.estimators import g2_heralded, g2_heralded_theory, g2_nonheralded_theory
from fwmlab.pipeline import source_model
from fwmlab.source import IDLER1, IDLER2, SIGNAL, DetectorSpec, simulate_run


def main(argv=None):
    ap = argparse.ArgumentParser(description="g2 statistics")
    ap.add_argument("--powers", type=float, nargs="+", default=[20.0, 40.0, 60.0, 100.0])
    ap.add_argument("--pulses", type=int, default=20_000_000)
    ap.add_argument("--modes", type=float, nargs="+", help="Schmidt coefficients (default: JSA)")
    ap.add_argument("--herald-efficiency", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    cfg = paper_replay_config()
    model = source_model(cfg)
    if args.modes:
        c = np.asarray(args.modes, float)
        model = replace(model, schmidt_coefficients=tuple(c / c.sum()))
    ideal = DetectorSpec(quantum_efficiency=1.0, path_transmission=1.0, dark_count_rate=0.0)
    det = {SIGNAL: replace(ideal, quantum_efficiency=args.herald_efficiency), IDLER1: ideal, IDLER2: ideal}
    window = cfg.correlator.coincidence_window_ps
    print(f"purity {model.purity:.4f}, {args.pulses:.2g} pulses per point")
    print(f"{'P/mW':>6} {'mu':>9} {'g2H':>10} {'+-':>9} {'theory':>10} {'g2NH':>8} {'theory':>8}")
    for k, P in enumerate(args.powers):
        s, i1, i2 = simulate_run(model, det, P, args.pulses, True, args.seed + k, threads=args.threads)
        counts = threefold(s.timestamps, i1.timestamps, i2.timestamps, window)
        g = g2_heralded(*counts)
        n12 = twofold(i1.timestamps, i2.timestamps, window)
        g2nh = n12 * args.pulses / (i1.timestamps.size * i2.timestamps.size) if n12 else float("nan")
        th = g2_heralded_theory(model, P, det[SIGNAL].efficiency, 0.5, 0.5)
        thn = g2_nonheralded_theory(model, P, 0.5, 0.5)
        mu = model.eta_gen * P**2
        print(f"{P:6g} {mu:9.3g} {g.value:10.4g} {g.sigma:9.2g} {th:10.4g} {g2nh:8.4f} {thn:8.4f}")


if __name__ == "__main__":
    main()
