"""Spread-spectrum demo: the fixed and dithered super-pipeline side by side.

Writes both spectra (frequency_hz, power) to the output directory and
prints the fundamental-band peak of each run and the reduction.

    python scripts/superpipe_emi.py [--seed N] [--out out/emi]
"""

import argparse
import math
import os

from gals_sim.config import load
from gals_sim.experiments import spectrum_compare

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "superpipe.toml"))
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=os.path.join("out", "emi"))
    args = ap.parse_args()

    exp = load(args.config, args.seed)
    cmp = spectrum_compare(exp)
    os.makedirs(args.out, exist_ok=True)
    lo, hi = cmp.band
    print(f"{cmp.edges} edges per run, band {lo / 1e6:.2f}-{hi / 1e6:.2f} MHz")
    for mode, spec in zip(cmp.modes, cmp.spectra):
        f, p = spec.peak(cmp.band)
        print(f"  {mode:<6} peak {10 * math.log10(p):6.2f} dB at {f / 1e6:.3f} MHz")
        spec.write_csv(os.path.join(args.out, f"spectrum_{mode}.csv"))
    print(f"peak reduction: {cmp.reduction_db:.2f} dB")


if __name__ == "__main__":
    main()
