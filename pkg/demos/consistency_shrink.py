#!/usr/bin/env python3
"""Show the MSE-trained regressor converging to the conditional mean.

On the 2-D linear-Gaussian toy the conditional mean E[x0 | x_t, y] is
known exactly, and a least-squares fit on (x_t, y, 1) features contains
it in its hypothesis class.  As the training-set size n grows the
fitted map's held-out distance to the analytic mean must shrink at the
classical p/n excess-risk rate.  This is the same estimator-consistency
harness the acceptance suite runs, with the analytic rate printed next
to the measurements.

Run:  python3 demos/consistency_shrink.py
"""

import numpy as np

from semcom import consistency_experiment, default_toy
from semcom.oracle import ols_excess_floor


def main() -> None:
    toy = default_toy()
    t = toy.schedule.T // 2
    n_list = [100, 1_000, 10_000, 100_000]
    seeds = range(5)

    rows = {n: [] for n in n_list}
    for seed in seeds:
        rng = np.random.default_rng([seed, 5000])
        for rec in consistency_experiment(toy, n_list, rng, t=t):
            rows[rec.n].append(rec.mse)

    print(f"held-out MSE to the analytic conditional mean at t = {t}")
    print(f"(median over {len(list(seeds))} seeds, 2000 held-out points)\n")
    print(f"{'n':>8} {'median mse':>12} {'p/n rate':>12}")
    for n in n_list:
        med = float(np.median(rows[n]))
        print(f"{n:>8} {med:>12.3e} {ols_excess_floor(toy, t, n):>12.3e}")

    first = float(np.median(rows[n_list[0]]))
    last = float(np.median(rows[n_list[-1]]))
    print(f"\nshrink factor from n = {n_list[0]} to n = {n_list[-1]}: "
          f"{first / last:.0f}x")


if __name__ == "__main__":
    main()
