"""Schedule tables: frozen constants, reductions, clamp behavior.

The frozen numbers below were recomputed with a standalone plain-Python
loop (no numpy) before being written here, so they are an independent
route to the same tables.
"""

import math

import numpy as np
import pytest

from semcom import ConfigError
from semcom.schedule import (
    DiffusionSchedule,
    W_CLAMP_MARGIN,
    build_schedule,
    sampler_coefficients,
)

# Default schedule, T=200, beta linear 1e-4 -> 0.0095, w ramp 0 -> 1.
ALPHA_BAR_200 = 0.381722135219536
DELTA_200 = 0.23655572956092796
PSI_1 = (1.0000500037503124, 0.0, 0.010000500037502575)
PSI_200 = (0.005049166401638528, 0.61767289825825, 0.0039701922097683)


@pytest.fixture(scope="module")
def sched() -> DiffusionSchedule:
    return build_schedule()


@pytest.fixture(scope="module")
def zero_w() -> DiffusionSchedule:
    return build_schedule(w_schedule="constant-zero")


def test_alpha_bar_matches_direct_product(sched):
    prod = 1.0
    for i in range(200):
        prod *= 1.0 - (1e-4 + (0.0095 - 1e-4) * i / 199)
    assert abs(sched.alpha_bar[-1] - prod) < 1e-12
    assert abs(sched.alpha_bar[-1] - ALPHA_BAR_200) < 1e-12


def test_forward_variance_final_step(sched):
    # w_200 = 1 exactly, so delta_200 = 1 - 2*abar_200.
    assert sched.w[-1] == 1.0
    assert sched.delta[-1] == pytest.approx(DELTA_200, abs=1e-15)
    assert sched.delta[-1] == pytest.approx(1.0 - 2.0 * ALPHA_BAR_200,
                                            abs=1e-15)


def test_monotonic_tables(sched):
    assert np.all(np.diff(sched.alpha_bar) < 0.0)
    assert np.all(np.diff(sched.beta) > 0.0)
    assert np.all(np.diff(sched.w) >= 0.0)
    assert sched.w[0] == 0.0
    assert np.all(sched.beta > 0.0) and np.all(sched.beta < 1.0)
    assert np.all(sched.delta > 0.0)
    assert np.all(sched.delta_cond > 0.0)


def test_zero_weight_variance_is_one_minus_alpha_bar(zero_w):
    assert np.allclose(zero_w.delta, 1.0 - zero_w.alpha_bar, rtol=0,
                       atol=1e-15)
    # step-conditional variance collapses to the per-step increment
    assert np.allclose(zero_w.delta_cond, zero_w.beta, rtol=1e-12)


def test_zero_weight_coefficients_reduce_to_plain_sampler(zero_w):
    a = zero_w.alpha
    abar = zero_w.alpha_bar
    want_x = 1.0 / np.sqrt(a)
    want_eps = zero_w.beta / (np.sqrt(a) * np.sqrt(1.0 - abar))
    assert np.allclose(zero_w.psi_x, want_x, rtol=1e-12)
    assert np.allclose(zero_w.psi_y, 0.0, atol=1e-15)
    assert np.allclose(zero_w.psi_eps, want_eps, rtol=1e-12)


def test_step_conditional_variance_recomputed(sched):
    # delta_cond_t = delta_t - lambda_t^2 delta_{t-1} with transition
    # coefficient lambda_t = (1-w_t)/(1-w_{t-1}) * sqrt(alpha_t);
    # recomputed here with scalar arithmetic.
    for t in range(1, sched.T + 1):
        i = t - 1
        wp = sched.w[i - 1] if t > 1 else 0.0
        dp = sched.delta[i - 1] if t > 1 else 0.0
        lam = (1.0 - sched.w[i]) / (1.0 - wp) * math.sqrt(sched.alpha[i])
        want = sched.delta[i] - lam * lam * dp
        assert sched.delta_cond[i] == pytest.approx(want, rel=1e-12)


def test_frozen_sampler_coefficients(sched):
    got1 = sampler_coefficients(sched, 1)
    gotT = sampler_coefficients(sched, 200)
    assert got1 == pytest.approx(PSI_1, rel=1e-12, abs=1e-15)
    assert gotT == pytest.approx(PSI_200, rel=1e-12)
    # t=1 boundary collapses to the unconditional update
    assert got1[0] == pytest.approx(1.0 / math.sqrt(sched.alpha[0]),
                                    rel=1e-12)
    assert got1[1] == 0.0
    assert got1[2] == pytest.approx(
        math.sqrt(sched.beta[0] / sched.alpha[0]), rel=1e-12)


def test_reverse_noise_var_modes(sched, zero_w):
    t = np.arange(1, sched.T + 1)
    assert np.array_equal(sched.reverse_noise_var(t, "forward"), sched.delta)
    post = zero_w.reverse_noise_var(t, "posterior")
    # plain-chain posterior variance (1 - abar_{t-1})/(1 - abar_t) beta_t
    abar_prev = np.concatenate(([1.0], zero_w.alpha_bar[:-1]))
    want = (1.0 - abar_prev) / (1.0 - zero_w.alpha_bar) * zero_w.beta
    assert np.allclose(post, want, rtol=1e-12)
    assert post[0] == 0.0
    with pytest.raises(ConfigError):
        sched.reverse_noise_var(t, "garbage")


def test_boundary_helpers(sched):
    t = np.arange(1, sched.T + 1)
    assert sched.alpha_bar_prev(1) == 1.0
    assert sched.w_prev(1) == 0.0
    assert sched.delta_prev(1) == 0.0
    assert np.array_equal(sched.alpha_bar_prev(t)[1:], sched.alpha_bar[:-1])
    assert np.array_equal(sched.w_prev(t)[1:], sched.w[:-1])
    assert np.array_equal(sched.delta_prev(t)[1:], sched.delta[:-1])


def test_weight_clamp_keeps_variances_positive():
    # Fast beta ramps force the endpoint below 1; slow ramps keep 1.
    grid = [(50, 1e-4, 0.02), (50, 1e-4, 0.05), (100, 1e-4, 0.02),
            (20, 1e-4, 0.05), (10, 1e-4, 0.3), (500, 1e-4, 0.005)]
    for T, b0, b1 in grid:
        s = build_schedule(T=T, beta_start=b0, beta_end=b1)
        assert np.all(s.delta > 0.0), (T, b1)
        assert np.all(s.delta_cond > 0.0), (T, b1)
        assert 0.0 < s.w[-1] <= 1.0
        assert np.all(s.w[:-1] < 1.0)
    clamped = build_schedule(T=50, beta_start=1e-4, beta_end=0.02)
    assert clamped.w[-1] < 1.0
    free = build_schedule(T=50, beta_start=1e-4, beta_end=0.05)
    assert free.w[-1] == 1.0


def test_clamped_endpoint_near_cap():
    # The shaved endpoint should sit just below the tightest per-step
    # cap, not far below it.
    s = build_schedule(T=50, beta_start=1e-4, beta_end=0.02)
    cap = np.sqrt((1.0 - s.alpha_bar) / s.alpha_bar)
    steps = np.arange(1, 51, dtype=float)
    w_cap = np.min(cap[1:] * 49.0 / (steps[1:] - 1.0))
    assert s.w[-1] <= w_cap
    assert s.w[-1] >= w_cap * (1.0 - 10.0 * W_CLAMP_MARGIN)


def test_build_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        build_schedule(T=1)
    with pytest.raises(ConfigError):
        build_schedule(beta_start=0.0)
    with pytest.raises(ConfigError):
        build_schedule(beta_start=0.5, beta_end=0.1)
    with pytest.raises(ConfigError):
        build_schedule(beta_end=1.0)
    with pytest.raises(ConfigError):
        build_schedule(w_schedule="cosine")


def test_check_step_bounds(sched):
    with pytest.raises(ConfigError):
        sched.check_step(0)
    with pytest.raises(ConfigError):
        sched.check_step(201)
    with pytest.raises(ConfigError):
        sched.check_step(np.array([1.0]))
    with pytest.raises(ConfigError):
        sampler_coefficients(sched, 0)
    sched.check_step(np.array([1, 200]))


def test_tables_are_read_only(sched):
    with pytest.raises(ValueError):
        sched.beta[0] = 0.5
