#!/usr/bin/env python3
"""Empirically verify the channel-stage statistics.

Checks four properties with medium-sized Monte Carlo runs:
  * AWGN adds sigma^2/2 variance per real component,
  * power normalization pins every row to symbol power P,
  * stochastic symbol masking keeps the right fraction and
    re-normalizes the survivors,
  * the two-user interference mix hits the closed-form SINR.

Run:  python3 demos/channel_statistics.py
"""

import numpy as np

from semcom import (awgn_rows, mix_interference, normalize_power, sinr_db,
                    snr_to_sigma2, stochastic_mask)


def awgn_moments(rng) -> None:
    print("AWGN per-component variance (n = 200000 components):")
    n = 200_000
    for snr in (-10.0, 0.0, 10.0):
        s2 = snr_to_sigma2(snr)
        noisy = awgn_rows(np.zeros(n), s2, rng)
        est = float(np.var(noisy))
        se = (s2 / 2.0) * np.sqrt(2.0 / n)
        print(f"  snr {snr:>6.1f} dB  sigma^2 {s2:>8.4f}  "
              f"target {s2 / 2.0:.5f}  measured {est:.5f}  "
              f"(se {se:.1e})")


def power_constraint(rng) -> None:
    print("\npower normalization (64 complex symbols, target P = 1):")
    for scale in (1e-3, 1.0, 40.0):
        raw = scale * rng.standard_normal(128)
        lat = normalize_power(raw, cbr=0.25)
        print(f"  raw scale {scale:>7.3f}  symbol power after "
              f"normalize: {lat.symbol_power():.12f}")


def masking(rng) -> None:
    print("\nstochastic masking down to half bandwidth "
          "(5000 repetitions x 50 symbols):")
    kept = 0
    total = 0
    worst_power = 0.0
    for _ in range(5000):
        lat = normalize_power(rng.standard_normal(100), cbr=0.2)
        masked = stochastic_mask(lat, cbr_test=0.1, cbr_train=0.2, rng=rng)
        sym = masked.values.reshape(-1, 2)
        kept += int(np.sum(np.any(sym != 0.0, axis=1)))
        total += lat.n_symbols
        worst_power = max(worst_power, abs(masked.symbol_power() - 1.0))
    print(f"  keep rate {kept / total:.4f} (expected 0.5000)")
    print(f"  worst |symbol power - 1| after masking: {worst_power:.2e}")


def interference(rng) -> None:
    print("\ntwo-user mixing and SINR:")
    cells = [((0.8, 0.2), 1.0, 0.0), ((0.9, 0.1), 0.01, 20.0)]
    for coeffs, sigma2, snr in cells:
        print(f"  coeffs {coeffs}, sigma^2 {sigma2:g}: "
              f"SINR = {sinr_db(coeffs, 1.0, sigma2):+.3f} dB")

    # Monte Carlo cross-check of the 0.8/0.2 cell: mixed symbols plus
    # unit-variance noise, measured signal and corruption powers.
    n = 200_000
    a = normalize_power(rng.standard_normal(n), cbr=0.5)
    b = normalize_power(rng.standard_normal(n), cbr=0.5)
    mixed = mix_interference(a, [b], (0.8, 0.2))
    noisy = awgn_rows(mixed.values, 1.0, rng)  # 0.5 per real component
    corruption = noisy - 0.8 * a.values
    measured = 10.0 * np.log10(np.mean((0.8 * a.values) ** 2)
                               / np.mean(corruption ** 2))
    print(f"  measured from {n} mixed noisy components: "
          f"{measured:+.3f} dB (formula {sinr_db((0.8, 0.2)):+.3f})")


def main() -> None:
    rng = np.random.default_rng(202)
    awgn_moments(rng)
    power_constraint(rng)
    masking(rng)
    interference(rng)


if __name__ == "__main__":
    main()
