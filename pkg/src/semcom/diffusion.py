"""Conditional forward diffusion and the reverse sampler.

The forward kernel interpolates between the clean image and the
conditioning tensor before adding noise:

    x_t = (1 - w_t) sqrt(abar_t) x0 + w_t sqrt(abar_t) cond + sqrt(delta_t) eps

The reverse step combines the current iterate, the conditioning and
the predicted noise with the precomputed psi coefficients, adding
fresh noise of the forward-kernel variance delta_t ("forward" mode)
or the conditional posterior variance ("posterior" mode).  At t=1 the
noise term is always omitted so the final output is deterministic
given eps_hat.

All operations broadcast over leading batch dimensions and accept
either a scalar step or a per-sample step vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .schedule import DiffusionSchedule

NOISE_MODES = ("forward", "posterior")


@dataclass(frozen=True)
class ConditionTensor:
    """A latent padded and reshaped to image spatial dimensions.

    ``data`` holds the latent entries in row-major order followed by
    zeros; ``mask`` is 1 where a real entry sits; ``source_len`` is the
    latent length.  Shape is (C, H, W), or (B, C, H, W) for a batch.
    """

    data: np.ndarray
    mask: np.ndarray
    source_len: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        mask = np.asarray(self.mask, dtype=float)
        if data.shape != mask.shape:
            raise ConfigError(f"mask shape {mask.shape} does not match "
                              f"data shape {data.shape}")
        if data.ndim not in (3, 4):
            raise ConfigError(f"expected (C, H, W) or (B, C, H, W), "
                              f"got {data.shape}")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ConfigError("mask entries must be 0 or 1")
        if np.any(data * (1.0 - mask) != 0.0):
            raise ConfigError("padded positions must be exactly zero")
        per_image = int(np.prod(data.shape[-3:]))
        if not (0 <= self.source_len <= per_image):
            raise ConfigError(f"source_len {self.source_len} outside "
                              f"0..{per_image}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)
        data.setflags(write=False)
        mask.setflags(write=False)

    @classmethod
    def zeros(cls, shape) -> "ConditionTensor":
        return cls(np.zeros(shape), np.zeros(shape), 0)


@dataclass(frozen=True)
class DiffusedSample:
    """One training pair; stores the exact noise draw for replay."""

    x_t: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    x0: np.ndarray
    cond: ConditionTensor


def _per_sample(values: np.ndarray, t, target_ndim: int) -> np.ndarray:
    """Gather schedule entries for step(s) t, shaped to broadcast."""
    out = np.asarray(values)[np.asarray(t) - 1]
    if out.ndim:
        out = out.reshape(out.shape + (1,) * (target_ndim - out.ndim))
    return out


def forward_kernel_coeffs(s: DiffusionSchedule, t, ndim: int):
    """(x0 coeff, cond coeff, noise std) for q(x_t | x0, cond)."""
    sqrt_abar = np.sqrt(_per_sample(s.alpha_bar, t, ndim))
    w = _per_sample(s.w, t, ndim)
    noise_std = np.sqrt(_per_sample(s.delta, t, ndim))
    return (1.0 - w) * sqrt_abar, w * sqrt_abar, noise_std


def forward_diffuse(x0: np.ndarray, cond: ConditionTensor, t,
                    s: DiffusionSchedule, rng: np.random.Generator,
                    eps: np.ndarray | None = None) -> DiffusedSample:
    """Draw x_t from the conditional forward kernel.

    ``eps`` can be forced for replay/oracle tests; otherwise it is a
    standard normal draw from ``rng``.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-3:] != cond.data.shape[-3:]:
        raise ConfigError(f"x0 {x0.shape} does not match condition "
                          f"{cond.data.shape}")
    s.check_step(t)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    else:
        eps = np.asarray(eps, dtype=float)
        if eps.shape != x0.shape:
            raise ConfigError(f"eps {eps.shape} does not match x0 {x0.shape}")
    a, b, std = forward_kernel_coeffs(s, t, x0.ndim)
    x_t = a * x0 + b * cond.data + std * eps
    return DiffusedSample(x_t=x_t, t=np.asarray(t), eps=eps, x0=x0, cond=cond)


def predict_eps(x_t: np.ndarray, x0_hat: np.ndarray, t,
                s: DiffusionSchedule) -> np.ndarray:
    """Recover the implied noise from a clean-image prediction."""
    s.check_step(t)
    x_t = np.asarray(x_t, dtype=float)
    x0_hat = np.asarray(x0_hat, dtype=float)
    if x_t.shape != x0_hat.shape:
        raise ConfigError(f"x_t {x_t.shape} vs x0_hat {x0_hat.shape}")
    abar = _per_sample(s.alpha_bar, t, x_t.ndim)
    return (x_t - np.sqrt(abar) * x0_hat) / np.sqrt(1.0 - abar)


def reverse_step(x_t: np.ndarray, cond: ConditionTensor,
                 eps_hat: np.ndarray, t, s: DiffusionSchedule,
                 rng: np.random.Generator | None,
                 noise_mode: str = "forward") -> np.ndarray:
    """One reverse-sampler update from step t to t-1.

    With ``rng=None`` the stochastic term is dropped entirely, giving
    the step's mean; that is also the deterministic path the reduction
    tests compare against the plain unconditional sampler.
    """
    if noise_mode not in NOISE_MODES:
        raise ConfigError(f"noise_mode {noise_mode!r} not in {NOISE_MODES}")
    s.check_step(t)
    x_t = np.asarray(x_t, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    if x_t.shape != eps_hat.shape:
        raise ConfigError(f"x_t {x_t.shape} vs eps_hat {eps_hat.shape}")
    ndim = x_t.ndim
    px = _per_sample(s.psi_x, t, ndim)
    py = _per_sample(s.psi_y, t, ndim)
    pe = _per_sample(s.psi_eps, t, ndim)
    mean = px * x_t + py * cond.data - pe * eps_hat
    if rng is None:
        return mean
    var = _per_sample(s.reverse_noise_var(np.arange(1, s.T + 1), noise_mode),
                      t, ndim)
    # Final-step noise suppression; elementwise so per-sample step
    # vectors mixing t=1 with t>1 stay correct.
    gate = (np.asarray(t) != 1).astype(float)
    gate = gate.reshape(gate.shape + (1,) * (ndim - gate.ndim)) if gate.ndim \
        else float(gate)
    return mean + np.sqrt(var) * gate * rng.standard_normal(x_t.shape)


def sample(cond: ConditionTensor, denoise_fn, s: DiffusionSchedule,
           rng: np.random.Generator, batch: int | None = None,
           noise_mode: str = "forward") -> np.ndarray:
    """Run the full reverse chain from x_T ~ N(0, I) down to x_0.

    ``denoise_fn(x_t, cond, t) -> x0_hat`` is the model hook.  With
    ``batch`` set, that many independent chains share the condition
    (leading axis).  The result is clamped to the [-1, 1] data range.
    """
    shape = cond.data.shape
    if batch is not None:
        if cond.data.ndim != 3:
            raise ConfigError("batch chains need a single (C, H, W) "
                              "condition")
        shape = (batch,) + shape
    x = rng.standard_normal(shape)
    for t in range(s.T, 0, -1):
        x0_hat = denoise_fn(x, cond, t)
        eps_hat = predict_eps(x, x0_hat, t, s)
        x = reverse_step(x, cond, eps_hat, t, s,
                         rng if t > 1 else None, noise_mode)
    return np.clip(x, -1.0, 1.0)
