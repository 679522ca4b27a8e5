"""Pre-measurement pulse: branch frequencies after the pulse vs |c_n|^2."""
import argparse

import numpy as np

from branchjump.model import built_in_measurement
from branchjump.trajectory import run_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--c", default="0.6,0.8", help="comma-separated amplitudes")
    ap.add_argument("--g", type=float, default=1.0)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    c = np.array([complex(s) for s in args.c.split(",")])
    m = built_in_measurement(c, g=args.g)
    stats = run_ensemble(m, args.n, args.seed, 1e-3)
    final = stats.occupation[-1]
    born = stats.born_weights[-1]
    for label, f, w, se in zip(stats.labels, final, born, stats.standard_error[-1]):
        print(f"{label:>8}: frequency {f:.4f}  Born {w:.4f}  stderr {se:.4f}")


if __name__ == "__main__":
    main()
