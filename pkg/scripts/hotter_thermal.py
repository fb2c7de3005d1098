"""Thermal run of the self-heating pipeline, printed as a coarse time series.

The fan fails partway through; the table shows temperature, r_th and sink
throughput every ``--every`` environment steps, then the fixed point found
by the frozen-rate bisection for comparison.

    python scripts/hotter_thermal.py [--every 25]
"""

import argparse
import os

from gals_sim.config import load
from gals_sim.experiments import thermal_run

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "hotter.toml"))
    ap.add_argument("--every", type=int, default=25)
    args = ap.parse_args()

    res = thermal_run(load(args.config))
    print(f"{'t (ms)':>8} {'T (C)':>9} {'r_th':>6} {'items/s':>12}")
    for i, (s, tp) in enumerate(zip(res.samples, res.throughput)):
        if i % args.every == 0 or i == len(res.samples) - 1:
            print(f"{s.time / 1e9:8.2f} {s.temperature:9.3f} {s.r_th:6.1f} {tp:12.6g}")
    print(f"final {res.final_temperature:.4f} C, bisection {res.oracle_temperature:.4f} C, "
          f"residual {res.residual:.2g} C")


if __name__ == "__main__":
    main()
