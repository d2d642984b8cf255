"""Noise schedules for the conditional diffusion link.

Everything the sampler needs per timestep is precomputed here once:
variance increments, their cumulative products, the conditioning
weights, the forward-kernel variance ``delta``, the step-conditional
variance ``delta_cond``, and the three reverse-step interpolation
coefficients.  The hot sampling loop then only does table lookups.

Timesteps are 1-indexed, ``t in {1..T}``.  Array entry ``i`` holds the
value for step ``t = i + 1``.  Boundary conventions for the coefficient
formulas: ``alpha_bar_0 = 1``, ``w_0 = 0``, ``delta_0 = 0``.  Under
those conventions the step ``t = 1`` coefficients degenerate to the
plain unconditional update, so the full range 1..T is supported even
though only steps >= 2 mix in the previous-step variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Fraction shaved off the conditioning-weight cap so delta_T stays
# strictly positive instead of touching zero.
W_CLAMP_MARGIN = 1e-3

W_SCHEDULES = ("linear", "constant-zero")


@dataclass(frozen=True)
class DiffusionSchedule:
    """Immutable per-step schedule tables, shareable across workers.

    All arrays have length ``T`` and are read-only.  ``delta_cond`` is
    the conditional variance of step t given step t-1; ``psi_x``,
    ``psi_y``, ``psi_eps`` are the reverse-sampler coefficients on the
    current iterate, the conditioning tensor, and the predicted noise.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    w: np.ndarray
    delta: np.ndarray
    delta_cond: np.ndarray
    psi_x: np.ndarray
    psi_y: np.ndarray
    psi_eps: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar", "w", "delta",
                     "delta_cond", "psi_x", "psi_y", "psi_eps"):
            arr = getattr(self, name)
            if arr.shape != (self.T,):
                raise ConfigError(f"schedule array {name} has shape "
                                  f"{arr.shape}, expected ({self.T},)")
            arr.setflags(write=False)

    def check_step(self, t) -> None:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            raise ConfigError(f"step index must be integral, got {t.dtype}")
        if np.any(t < 1) or np.any(t > self.T):
            raise ConfigError(f"step index {t} outside 1..{self.T}")

    def alpha_bar_prev(self, t):
        """alpha_bar at step t-1, with the t=1 boundary giving 1."""
        t = np.asarray(t)
        return np.where(t > 1, self.alpha_bar[np.maximum(t - 2, 0)], 1.0)

    def w_prev(self, t):
        """Conditioning weight at step t-1; 0 at the t=1 boundary."""
        t = np.asarray(t)
        return np.where(t > 1, self.w[np.maximum(t - 2, 0)], 0.0)

    def delta_prev(self, t):
        """Forward-kernel variance at step t-1; 0 at the t=1 boundary."""
        t = np.asarray(t)
        return np.where(t > 1, self.delta[np.maximum(t - 2, 0)], 0.0)

    def reverse_noise_var(self, t, mode: str = "forward"):
        """Variance of the stochastic term added by one reverse step.

        ``forward`` reuses the forward-kernel variance delta_t;
        ``posterior`` uses the conditional posterior variance
        delta_cond*delta_prev/delta, which vanishes at t=1 by
        construction.
        """
        t = np.asarray(t)
        if mode == "forward":
            return self.delta[t - 1]
        if mode == "posterior":
            return self.delta_cond[t - 1] * self.delta_prev(t) / self.delta[t - 1]
        raise ConfigError(f"unknown reverse noise mode {mode!r}")


def build_schedule(T: int = 200, beta_start: float = 1e-4,
                   beta_end: float = 0.0095,
                   w_schedule: str = "linear") -> DiffusionSchedule:
    """Build all schedule tables for a linear beta ramp.

    The conditioning weights run linearly from 0 at t=1 up to
    ``min(1, w_max)`` at t=T, where ``w_max`` is the largest endpoint
    keeping the forward variance ``delta_T`` strictly positive.  The
    ``constant-zero`` variant disables conditioning entirely, which
    reduces every formula to the plain unconditional diffusion and is
    what the reduction tests run against.
    """
    if T < 2:
        raise ConfigError(f"need at least 2 steps, got T={T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"beta range ({beta_start}, {beta_end}) must "
                          "satisfy 0 < start <= end < 1")
    if w_schedule not in W_SCHEDULES:
        raise ConfigError(f"unknown w schedule {w_schedule!r}; "
                          f"choose from {W_SCHEDULES}")

    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)

    def ramp_variances(w_end: float):
        w = np.linspace(0.0, w_end, T)
        delta = (1.0 - alpha_bar) - w ** 2 * alpha_bar
        delta_prev = np.concatenate(([0.0], delta[:-1]))
        ratio = (1.0 - w) / (1.0 - np.concatenate(([0.0], w[:-1])))
        return w, delta, delta - ratio ** 2 * alpha * delta_prev

    def feasible(w_end: float) -> bool:
        w, delta, delta_cond = ramp_variances(w_end)
        return bool(np.all(delta > 0.0) and np.all(delta_cond > 0.0))

    if w_schedule == "constant-zero":
        w = np.zeros(T)
    else:
        # delta_t = (1 - abar_t) - w_t^2 abar_t > 0 iff
        # w_t < sqrt((1 - abar_t)/abar_t).  For the linear ramp
        # w_t = w_end (t-1)/(T-1) that caps the endpoint at every step,
        # and with fast beta ramps an early step binds, not t=T.  The
        # step-conditional variance must stay positive too; when the
        # closed-form cap violates it, bisect down to the boundary.
        cap = np.sqrt((1.0 - alpha_bar) / alpha_bar)
        steps = np.arange(1, T + 1, dtype=float)
        w_cap = np.min(cap[1:] * (T - 1) / (steps[1:] - 1.0))
        w_end = min(1.0, w_cap * (1.0 - W_CLAMP_MARGIN))
        if not feasible(w_end):
            lo, hi = 0.0, w_end
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
            w_end = lo * (1.0 - W_CLAMP_MARGIN)
        w = np.linspace(0.0, w_end, T)

    # The clamp should have made these unreachable for the linear ramp;
    # they still guard the constant-zero branch against bad beta ranges.
    delta = (1.0 - alpha_bar) - w ** 2 * alpha_bar
    if np.any(delta <= 0.0):
        bad = int(np.argmax(delta <= 0.0)) + 1
        raise ConfigError(f"forward variance delta_{bad} = "
                          f"{delta[bad - 1]:.3e} is not positive")
    if np.any(w[:-1] >= 1.0):
        raise ConfigError("conditioning weight reaches 1 before the "
                          "final step; coefficient formulas divide "
                          "by (1 - w_{t-1})")

    # Shifted views with the t=1 boundary values prepended.
    w_prev = np.concatenate(([0.0], w[:-1]))
    abar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    delta_prev = np.concatenate(([0.0], delta[:-1]))

    ratio = (1.0 - w) / (1.0 - w_prev)
    delta_cond = delta - ratio ** 2 * alpha * delta_prev
    if np.any(delta_cond <= 0.0):
        bad = int(np.argmax(delta_cond <= 0.0)) + 1
        raise ConfigError(f"conditional variance at step {bad} is not "
                          "positive; schedule too aggressive")

    sqrt_alpha = np.sqrt(alpha)
    psi_x = (delta_prev * (1.0 - w) / (delta * (1.0 - w_prev)) * sqrt_alpha
             + (1.0 - w_prev) * delta_cond / (delta * sqrt_alpha))
    psi_y = ((w_prev * delta - w * (1.0 - w) / (1.0 - w_prev) * alpha * delta_prev)
             * np.sqrt(abar_prev) / delta)
    psi_eps = ((1.0 - w_prev) * delta_cond * np.sqrt(1.0 - alpha_bar)
               / (delta * sqrt_alpha))

    arrays = (beta, alpha, alpha_bar, w, delta, delta_cond,
              psi_x, psi_y, psi_eps)
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ConfigError("schedule produced non-finite entries")

    return DiffusionSchedule(T, *arrays)


def sampler_coefficients(s: DiffusionSchedule, t: int):
    """Reverse-step coefficients (psi_x, psi_y, psi_eps) at step t.

    Defined for the whole range 1 <= t <= T; at t=1 the boundary
    conventions collapse the formulas to the unconditional update.
    """
    s.check_step(t)
    return float(s.psi_x[t - 1]), float(s.psi_y[t - 1]), float(s.psi_eps[t - 1])
