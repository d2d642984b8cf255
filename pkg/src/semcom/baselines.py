"""Benchmark pipelines: matched autoencoder and VAE.

The matched decoder mirrors the semantic encoder stage by stage:
reversed channel widths, transposed convolutions where the encoder
strode down (kernel 4), size-preserving transposed convolutions where
it did not (kernel 3), batch norm if the encoder used it.  The VAE
shares the encoder trunk shape but ends in two heads per bandwidth,
for the latent mean and log-variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .channel import SemanticLatent, normalize_rows
from .encoder import EncoderConfig
from .errors import ConfigError

LOG_VAR_MIN = -30.0
LOG_VAR_MAX = 20.0


@dataclass(frozen=True)
class VaeHead:
    """Latent Gaussian parameters, (L,) or batched (B, L)."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        lv = np.asarray(self.log_var, dtype=float)
        if mu.shape != lv.shape:
            raise ConfigError(f"mu {mu.shape} vs log_var {lv.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
            raise ConfigError("VaeHead entries must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_var", lv)


def vae_reparameterize(head: VaeHead, rng: np.random.Generator,
                       power: float = 1.0) -> np.ndarray:
    """Draw z = mu + sigma * eps, then power-normalize.

    Shape follows the head; the zero-variance limit (log_var at the
    -30 clamp) collapses to normalize(mu).
    """
    eps = rng.standard_normal(head.mu.shape)
    z = head.mu + np.exp(head.log_var / 2.0) * eps
    normalized, _ = normalize_rows(z, power)
    return normalized


def vae_kl(head: VaeHead) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)), averaged over any batch."""
    kl = 0.5 * (head.mu ** 2 + np.exp(head.log_var) - head.log_var - 1.0)
    per_sample = kl.sum(axis=-1)
    return float(np.mean(per_sample))


def vae_loss(x0: np.ndarray, x_hat: np.ndarray, head: VaeHead) -> float:
    """Equal-weight pixel-mean MSE plus the KL term."""
    x0 = np.asarray(x0, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x0.shape != x_hat.shape:
        raise ConfigError(f"shape mismatch {x0.shape} vs {x_hat.shape}")
    mse = float(np.mean((x0 - x_hat) ** 2))
    return mse + vae_kl(head)


class _ClampLogVar(nn.Module):
    def forward(self, x):
        self._inside = (x > LOG_VAR_MIN) & (x < LOG_VAR_MAX)
        return np.clip(x, LOG_VAR_MIN, LOG_VAR_MAX)

    def backward(self, grad_out):
        return grad_out * self._inside


def _build_trunk(config: EncoderConfig, rng) -> nn.Sequential:
    layers = []
    c_in = config.input_channels
    for c_out, stride in zip(config.conv_channels, config.conv_strides):
        layers.append(nn.Conv2d(c_in, c_out, 3, rng, stride=stride, pad=1))
        if config.batch_norm:
            layers.append(nn.BatchNorm2d(c_out))
        layers.append(nn.ReLU())
        c_in = c_out
    return nn.Sequential(*layers)


class VaeEncoder(nn.Module):
    """Encoder trunk with per-CBR mean and log-variance heads."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.trunk = _build_trunk(config, rng)
        self.mu_heads = nn.ModuleList()
        self.lv_heads = nn.ModuleList()
        self.clamp = _ClampLogVar()
        self._head_index = {}
        for cbr in config.cbr_list:
            self._head_index[float(cbr)] = len(self.mu_heads)
            self.mu_heads.append(nn.Linear(config.feature_dim,
                                           config.latent_dim(cbr), rng))
            self.lv_heads.append(nn.Linear(config.feature_dim,
                                           config.latent_dim(cbr), rng))

    def forward(self, x: np.ndarray, cbr: float) -> VaeHead:
        try:
            i = self._head_index[float(cbr)]
        except KeyError:
            raise ConfigError(f"no VAE head for cbr={cbr}; available: "
                              f"{sorted(self._head_index)}") from None
        feat = self.trunk(np.asarray(x, dtype=float))
        self._feat_shape = feat.shape
        self._used_head_idx = i
        flat = feat.reshape(feat.shape[0], -1)
        mu = self.mu_heads[i](flat)
        log_var = self.clamp(self.lv_heads[i](flat))
        return VaeHead(mu=mu, log_var=log_var)

    def backward(self, dmu: np.ndarray, dlog_var: np.ndarray) -> np.ndarray:
        i = self._used_head_idx
        dfeat = self.mu_heads[i].backward(dmu)
        dfeat = dfeat + self.lv_heads[i].backward(self.clamp.backward(dlog_var))
        return self.trunk.backward(dfeat.reshape(self._feat_shape))


class MatchedDecoder(nn.Module):
    """Transposed-convolution mirror of a SemanticEncoder."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.heads = nn.ModuleList()
        self._head_index = {}
        for cbr in config.cbr_list:
            self._head_index[float(cbr)] = len(self.heads)
            self.heads.append(nn.Linear(config.latent_dim(cbr),
                                        config.feature_dim, rng))
        channels = list(reversed(config.conv_channels))
        strides = list(reversed(config.conv_strides))
        targets = channels[1:] + [config.input_channels]
        layers = []
        for i, (c_in, c_out, stride) in enumerate(
                zip(channels, targets, strides)):
            k = 4 if stride == 2 else 3
            layers.append(nn.ConvTranspose2d(c_in, c_out, k, rng,
                                             stride=stride, pad=1))
            if i < len(channels) - 1:
                if config.batch_norm:
                    layers.append(nn.BatchNorm2d(c_out))
                layers.append(nn.ReLU())
        self.trunk = nn.Sequential(*layers)

    def forward(self, values: np.ndarray, cbr: float) -> np.ndarray:
        try:
            idx = self._head_index[float(cbr)]
        except KeyError:
            raise ConfigError(f"no decoder head for cbr={cbr}; available: "
                              f"{sorted(self._head_index)}") from None
        v = np.asarray(values, dtype=float)
        if v.ndim != 2:
            raise ConfigError(f"expected (B, L) latents, got {v.shape}")
        # Index, not module: module-valued attributes would register as
        # an extra child and alias the head's parameters.
        self._used_head_idx = idx
        feat = self.heads[idx](v)
        fm = self.config.feature_map_size
        grid = feat.reshape(v.shape[0], self.config.conv_channels[-1], fm, fm)
        self._feat_shape = grid.shape
        return self.trunk(grid)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        dgrid = self.trunk.backward(np.asarray(grad_out, dtype=float))
        dfeat = dgrid.reshape(dgrid.shape[0], -1)
        return self.heads[self._used_head_idx].backward(dfeat)


def matched_decode(latent: SemanticLatent, decoder: MatchedDecoder) -> np.ndarray:
    """Decode one latent back to a (C, H, W) image."""
    if latent.cbr is None:
        raise ConfigError("latent carries no cbr; cannot pick a head")
    return decoder.forward(latent.values[None], latent.cbr)[0]
