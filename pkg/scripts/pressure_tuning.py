"""Phase-matched signal/idler wavelengths versus gas pressure.

    python3 scripts/pressure_tuning.py --out tuning.csv --pmin 1 --pmax 6 --n 51
"""
import argparse
import sys

import numpy as np

from fwmlab.config import load_config, paper_replay_config
from fwmlab.dispersion import pressure_sweep, sweep_to_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="scenario JSON (default: reference scenario)")
    ap.add_argument("--pmin", type=float, default=2.0, help="bar")
    ap.add_argument("--pmax", type=float, default=5.0, help="bar")
    ap.add_argument("--n", type=int, default=31)
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)

    cfg = load_config(args.config) if args.config else paper_replay_config()
    pressures = np.linspace(args.pmin, args.pmax, args.n) * 1e5
    sweep = pressure_sweep(cfg.pump, cfg.fiber, cfg.gas, pressures,
                           omega_min_detuning=2 * np.pi * cfg.min_detuning_THz * 1e12)
    text = sweep_to_csv(sweep)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as f:
            f.write(text)
        ok = [s for _, s in sweep if s is not None]
        print(f"{len(ok)}/{len(sweep)} pressures phase-matched -> {args.out}")


if __name__ == "__main__":
    main()
