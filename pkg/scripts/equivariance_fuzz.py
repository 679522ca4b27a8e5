"""Master-equation vs Born-weight deviation over a batch of random models."""
import argparse
import time

import numpy as np

from branchjump.model import random_model
from branchjump.verify import equivariance_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", type=int, default=20)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--t-max", type=float, default=10.0)
    ap.add_argument("--segments", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-rectify", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    start = time.perf_counter()
    print(f"{'model':>5} {'dim':>4} {'branches':>8} {'max |p - w|':>12}")
    for k in range(args.models):
        m = random_model(rng, max_dim=args.dim, t_max=args.t_max, n_segments=args.segments)
        r = equivariance_report(m, tolerance=1e-5, rectify=not args.no_rectify, catch_instability=True)
        dev = r.error or f"{r.max_abs_deviation:.3e}"
        print(f"{k:>5} {m.dim:>4} {m.n_branches:>8} {dev:>12}")
    print(f"total {time.perf_counter() - start:.1f} s")


if __name__ == "__main__":
    main()
