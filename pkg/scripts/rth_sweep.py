"""Stationary temperature and throughput against thermal resistance.

Each point is the frozen-rate bisection for one r_th, so no coupled run
is needed; the sweep shows how much hotter and slower the pipeline settles
as cooling degrades.

    python scripts/rth_sweep.py [--factors 1 1.5 2 3 4]
"""

import argparse
import os
from dataclasses import replace

from gals_sim.config import load
from gals_sim.experiments import frozen_rate, steady_state

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "hotter.toml"))
    ap.add_argument("--factors", type=float, nargs="+", default=[1, 1.5, 2, 3, 4])
    args = ap.parse_args()

    exp = load(args.config)
    env = replace(exp.environment, steps=())
    base = env.model.r_th
    print(f"{'r_th':>6} {'T* (C)':>9} {'edges/s':>12}")
    for f in args.factors:
        e = replace(env, model=replace(env.model, r_th=base * f))
        t = steady_state(exp, e)
        rate = frozen_rate(replace(exp, environment=e), t)
        print(f"{base * f:6.1f} {t:9.3f} {rate:12.6g}")


if __name__ == "__main__":
    main()
