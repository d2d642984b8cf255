#!/usr/bin/env python3
"""Drive the full reverse sampler with an exact denoiser.

On a one-pixel linear-Gaussian world the conditional mean E[x0 | x_t, y]
has a closed form, so we can hand the sampler a perfect denoiser and
see what the chain itself contributes.  Three observations fall out:

  * chain averages are unbiased for E[x0 | y] in both noise modes,
  * the ``posterior`` noise mode also reproduces the posterior spread,
    while the ``forward`` mode over-disperses individual chains,
  * a single ``posterior`` chain therefore lands near the conditional
    mean, which is the regime the image decoder runs in.

Run:  python3 demos/sampler_playground.py
"""

import numpy as np

from semcom import (ConditionTensor, LinearGaussianToy,
                    analytic_posterior_mean, build_schedule, sample)


def pixel_toy(schedule) -> LinearGaussianToy:
    return LinearGaussianToy(schedule=schedule,
                             mean0=np.array([0.1]),
                             cov0=np.array([[0.04]]),
                             obs_matrix=np.array([[1.0]]),
                             obs_noise_var=0.02)


def posterior_given_y(toy, y_val: float):
    """E[x0 | y] and Var[x0 | y] by direct Gaussian conditioning."""
    A = toy.obs_matrix
    cov_yy = float((A @ toy.cov0 @ A.T)[0, 0] + toy.obs_noise_var)
    cov_0y = float((toy.cov0 @ A.T)[0, 0])
    mean = float(toy.mean0[0]) + cov_0y / cov_yy * \
        (y_val - float((A @ toy.mean0)[0]))
    var = float(toy.cov0[0, 0]) - cov_0y ** 2 / cov_yy
    return mean, var


def oracle_denoiser(toy, y_val: float):
    def fn(x, cond, t):
        flat = x.reshape(-1, 1)
        y = np.full_like(flat, y_val)
        return analytic_posterior_mean(toy, flat, y, t).reshape(x.shape)
    return fn


def main() -> None:
    schedule = build_schedule()
    toy = pixel_toy(schedule)
    y_val = 0.15
    post_mean, post_var = posterior_given_y(toy, y_val)
    print(f"observation y = {y_val}")
    print(f"analytic posterior: mean {post_mean:.6f}, "
          f"sd {np.sqrt(post_var):.6f}")

    cond = ConditionTensor(np.full((1, 1, 1), y_val),
                           np.ones((1, 1, 1)), 1)
    fn = oracle_denoiser(toy, y_val)
    n = 10_000
    print(f"\n{n} independent chains, both reverse noise modes:")
    for mode, seed in (("forward", 123), ("posterior", 124)):
        out = sample(cond, fn, schedule, np.random.default_rng(seed),
                     batch=n, noise_mode=mode).reshape(-1)
        se = float(np.std(out)) / np.sqrt(n)
        print(f"  {mode:>9}: chain mean {np.mean(out):+.6f} "
              f"(target {post_mean:+.6f}, se {se:.1e}), "
              f"chain sd {np.std(out):.4f} "
              f"(posterior sd {np.sqrt(post_var):.4f})")
    print("  both means are unbiased; only the posterior mode also"
          "\n  matches the spread, the forward mode scatters wider.")

    print("\nsingle posterior-mode chains:")
    for seed in range(5):
        out = sample(cond, fn, schedule, np.random.default_rng(seed),
                     noise_mode="posterior")
        print(f"  seed {seed}: x0 = {out.item():+.6f}   "
              f"({(out.item() - post_mean) / np.sqrt(post_var):+.2f} "
              f"posterior sd from the mean)")


if __name__ == "__main__":
    main()
