"""Jump-process ensemble on the two-level Rabi model, compared to sin^2(omega t)."""
import argparse
import time

import numpy as np

from branchjump.model import built_in_rabi
from branchjump.trajectory import run_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--omega", type=float, default=1.0)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    m = built_in_rabi(args.omega)
    start = time.perf_counter()
    stats = run_ensemble(m, args.n, args.seed, args.dt, threads=args.threads)
    elapsed = time.perf_counter() - start
    print(f"{args.n} trajectories, {stats.n_jumps} jumps, {elapsed:.1f} s")
    print(f"{'t':>8} {'freq(1)':>9} {'sin^2':>9} {'z':>7}")
    z = stats.z_scores()
    for frac in np.linspace(0, 1, 17):
        i = stats.index_near(frac * m.t_max)
        t = stats.times[i]
        print(f"{t:8.4f} {stats.occupation[i, 1]:9.4f} {np.sin(args.omega * t) ** 2:9.4f} {z[i, 1]:7.2f}")
    print(f"fraction of grid cells within 4 sigma: {stats.pass_fraction(4.0):.4f}")


if __name__ == "__main__":
    main()
