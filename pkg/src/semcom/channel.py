"""Wireless link model: power normalization, AWGN, interference mixing.

Latents represent complex channel symbols as interleaved real pairs,
so a vector of length 2*Nc carries Nc symbols.  Circularly symmetric
complex noise of variance sigma^2 therefore puts sigma^2/2 on each
real component.  The average per-symbol power constraint P is enforced
by scaling to l2-norm sqrt(Nc*P); with P=1 that is exactly the
unit-norm-times-sqrt(Nc) convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError

COEFF_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SemanticLatent:
    """A power-normalized channel-symbol vector.

    values: real vector of length 2*Nc (interleaved re/im parts).
    cbr: channel bandwidth ratio k/n that produced this latent, or
        None when the source dimension is unknown (standalone use).
    power: per-symbol average power target P.
    """

    values: np.ndarray
    cbr: float | None = None
    power: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0 or v.size % 2 != 0:
            raise ConfigError(f"latent must be a nonempty even-length "
                              f"1-D vector, got shape {v.shape}")
        if self.cbr is not None and not (0.0 < self.cbr < 1.0):
            raise ConfigError(f"cbr {self.cbr} outside (0, 1)")
        if self.power <= 0.0:
            raise ConfigError(f"power {self.power} must be positive")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def n_symbols(self) -> int:
        return self.values.size // 2

    def symbol_power(self) -> float:
        """Average per-symbol power (1/Nc) * sum |z_i|^2."""
        return float(np.sum(self.values ** 2) / self.n_symbols)


@dataclass(frozen=True)
class ChannelConfig:
    """AWGN channel parameters; noise variance derived from SNR."""

    snr_db: float
    power: float = 1.0
    # Optional convex mixing coefficients for a multi-user cell; the
    # first entry belongs to the intended user.
    interference_coeffs: tuple = ()

    def __post_init__(self):
        if self.power <= 0.0:
            raise ConfigError(f"power {self.power} must be positive")
        if self.interference_coeffs:
            c = np.asarray(self.interference_coeffs, dtype=float)
            if np.any(c < 0.0):
                raise ConfigError("mixing coefficients must be nonnegative")
            if abs(c.sum() - 1.0) > COEFF_SUM_TOL:
                raise ConfigError(f"mixing coefficients sum to {c.sum()}, "
                                  "expected 1")

    @property
    def sigma2(self) -> float:
        return snr_to_sigma2(self.snr_db, self.power)


def snr_to_sigma2(snr_db: float, power: float = 1.0) -> float:
    """Noise variance for a given SNR in dB: sigma^2 = P / 10^(G/10)."""
    return power / 10.0 ** (snr_db / 10.0)


def sigma2_to_snr(sigma2: float, power: float = 1.0) -> float:
    if sigma2 <= 0.0:
        raise ConfigError("sigma2 must be positive to express an SNR")
    return 10.0 * np.log10(power / sigma2)


def normalize_rows(values: np.ndarray, power: float = 1.0):
    """Scale each row to l2-norm sqrt(Nc*P); returns (scaled, norms).

    Shared by the single-latent API and the batched training path so
    there is exactly one implementation of the power convention.
    """
    v = np.asarray(values, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[None, :]
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot power-normalize a zero vector")
    n_symbols = v.shape[1] // 2
    target = np.sqrt(n_symbols * power)
    out = v * (target / norms)[:, None]
    if squeeze:
        out = out[0]
    return out, norms


def normalize_rows_backward(grad_out: np.ndarray, values: np.ndarray,
                            norms: np.ndarray, power: float = 1.0) -> np.ndarray:
    """Backprop through normalize_rows.

    The map is v -> s * v / |v| with s = sqrt(Nc*P); its Jacobian is the
    scaled projection s/|v| * (I - v v^T / |v|^2).
    """
    v = np.asarray(values, dtype=float)
    g = np.asarray(grad_out, dtype=float)
    n_symbols = v.shape[-1] // 2
    target = np.sqrt(n_symbols * power)
    squeeze = v.ndim == 1
    if squeeze:
        v, g = v[None, :], g[None, :]
    # accept a scalar, a 0-d array, or the (1,) array normalize_rows
    # returns for 1-D input
    norms = np.reshape(np.asarray(norms, dtype=float), (v.shape[0],))
    inner = np.sum(v * g, axis=1, keepdims=True)
    out = (target / norms)[:, None] * (g - v * inner / (norms ** 2)[:, None])
    if squeeze:
        out = out[0]
    return out


def normalize_power(values, cbr: float | None = None,
                    power: float = 1.0) -> SemanticLatent:
    """Return the power-normalized latent for a raw real vector.

    Idempotent: normalizing an already-normalized latent is a no-op up
    to floating-point roundoff.  A zero vector has no direction to keep
    and raises.
    """
    scaled, _ = normalize_rows(values, power)
    return SemanticLatent(scaled, cbr=cbr, power=power)


def awgn_rows(values: np.ndarray, sigma2, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise, sigma^2/2 per real component.

    ``sigma2`` may be a scalar or one variance per row.  sigma2 = 0 is
    the identity channel (infinite SNR limit) and draws nothing from
    ``rng`` so the stream stays aligned across SNR grids.
    """
    v = np.asarray(values, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(s2 < 0.0):
        raise ConfigError("noise variance must be nonnegative")
    if np.all(s2 == 0.0):
        return v.copy()
    scale = np.sqrt(s2 / 2.0)
    if v.ndim == 2 and scale.ndim == 1:
        scale = scale[:, None]
    return v + scale * rng.standard_normal(v.shape)


def awgn(latent: SemanticLatent, cfg: ChannelConfig,
         rng: np.random.Generator) -> SemanticLatent:
    """Pass a latent through the AWGN channel configured by ``cfg``."""
    noisy = awgn_rows(latent.values, cfg.sigma2, rng)
    return SemanticLatent(noisy, cbr=latent.cbr, power=latent.power)


def mix_interference(primary: SemanticLatent, interferers, coeffs,
                     rng: np.random.Generator | None = None) -> SemanticLatent:
    """Convex combination of co-channel latents, applied before noise.

    ``coeffs[0]`` weights the intended user.  Shorter interferer
    latents are zero-padded to the primary's length.  ``rng`` is
    accepted for interface symmetry with the other channel stages but
    the mixing itself is deterministic.
    """
    interferers = list(interferers)
    c = np.asarray(coeffs, dtype=float)
    if c.size != 1 + len(interferers):
        raise ConfigError(f"{c.size} coefficients for "
                          f"{1 + len(interferers)} users")
    if np.any(c < 0.0):
        raise ConfigError("mixing coefficients must be nonnegative")
    if abs(c.sum() - 1.0) > COEFF_SUM_TOL:
        raise ConfigError(f"mixing coefficients sum to {c.sum():.12f}, "
                          "expected 1 within 1e-9")
    out = c[0] * primary.values
    for coeff, other in zip(c[1:], interferers):
        v = other.values
        if v.size > primary.values.size:
            raise ConfigError("interferer latent longer than primary")
        if v.size < primary.values.size:
            v = np.concatenate([v, np.zeros(primary.values.size - v.size)])
        out = out + coeff * v
    return SemanticLatent(out, cbr=primary.cbr, power=primary.power)


def sinr_db(coeffs, power: float = 1.0, sigma2: float = 1.0) -> float:
    """Two-user signal-to-interference-plus-noise ratio in dB.

    With intended-user coefficient c1 and interferer coefficient c2,
    both transmitting at power P over noise sigma^2:
    SINR = 10 log10(c1^2 P / (c2^2 P + sigma^2)).
    """
    c = np.asarray(coeffs, dtype=float)
    if c.size != 2:
        raise ConfigError(f"sinr_db is defined for the two-user case, "
                          f"got {c.size} coefficients")
    signal = c[0] ** 2 * power
    denom = c[1] ** 2 * power + sigma2
    if denom <= 0.0:
        raise ConfigError("interference-plus-noise power must be positive")
    return float(10.0 * np.log10(signal / denom))


def stochastic_mask(latent: SemanticLatent, cbr_test: float,
                    cbr_train: float, rng: np.random.Generator) -> SemanticLatent:
    """Randomly drop symbols to emulate a lower test-time bandwidth.

    Each complex symbol survives independently with probability
    p = cbr_test/cbr_train; dropped symbols lose both real components.
    The survivors are re-normalized so the power constraint still
    holds.  If every symbol is dropped (probability p^Nc, negligible at
    real sizes) the renormalization rejects the zero vector.
    """
    if not (0.0 < cbr_test <= cbr_train):
        raise ConfigError(f"cbr_test {cbr_test} must be in (0, cbr_train"
                          f" = {cbr_train}]; upsampling is unsupported")
    p = cbr_test / cbr_train
    keep = rng.random(latent.n_symbols) < p
    masked = latent.values * np.repeat(keep, 2)
    return normalize_power(masked, cbr=latent.cbr, power=latent.power)
