"""Semantic encoder: conv trunk, per-CBR heads, pad-and-reshape.

The trunk downsamples 32x32 inputs to a 4x4 feature map with stride-2
3x3 convolutions (ReLU, optional batch norm).  Each supported channel
bandwidth ratio owns a linear projection head; the head output is
power-normalized into a SemanticLatent.  ``pad_and_reshape`` lifts a
latent to image spatial dimensions for the denoiser's conditioning
input, zero-padding the tail and recording a validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .channel import SemanticLatent, normalize_power
from .diffusion import ConditionTensor
from .errors import ConfigError


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = 1
    image_size: int = 32
    conv_channels: tuple = (8, 16, 32)
    conv_strides: tuple = (2, 2, 2)
    batch_norm: bool = False
    cbr_list: tuple = (0.3,)

    def __post_init__(self):
        if len(self.conv_channels) != len(self.conv_strides):
            raise ConfigError("conv_channels and conv_strides lengths differ")
        if not self.cbr_list:
            raise ConfigError("cbr_list must not be empty")
        for cbr in self.cbr_list:
            if not (0.0 < cbr < 1.0):
                raise ConfigError(f"cbr {cbr} outside (0, 1)")

    @property
    def input_dim(self) -> int:
        return self.input_channels * self.image_size ** 2

    def latent_dim(self, cbr: float) -> int:
        """Real latent length 2*int(input_dim*cbr): Nc complex symbols."""
        return 2 * int(self.input_dim * cbr)

    @property
    def feature_map_size(self) -> int:
        size = self.image_size
        for stride in self.conv_strides:
            size = nn.conv_out_size(size, 3, stride, 1)
        return size

    @property
    def feature_dim(self) -> int:
        return self.conv_channels[-1] * self.feature_map_size ** 2

    @classmethod
    def mnist(cls, cbr_list=(0.3,)) -> "EncoderConfig":
        return cls(input_channels=1, conv_channels=(8, 16, 32),
                   conv_strides=(2, 2, 2), batch_norm=False,
                   cbr_list=tuple(cbr_list))

    @classmethod
    def cifar10(cls, cbr_list=(0.4,)) -> "EncoderConfig":
        # Final stage keeps stride 1 so the feature map stays 4x4.
        return cls(input_channels=3, conv_channels=(64, 128, 256, 256),
                   conv_strides=(2, 2, 2, 1), batch_norm=True,
                   cbr_list=tuple(cbr_list))


class SemanticEncoder(nn.Module):
    """Conv trunk shared across bandwidths + one head per CBR."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        layers = []
        c_in = config.input_channels
        for c_out, stride in zip(config.conv_channels, config.conv_strides):
            layers.append(nn.Conv2d(c_in, c_out, 3, rng, stride=stride, pad=1))
            if config.batch_norm:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.ReLU())
            c_in = c_out
        self.trunk = nn.Sequential(*layers)
        self.heads = nn.ModuleList()
        self._head_index = {}
        for cbr in config.cbr_list:
            self._head_index[float(cbr)] = len(self.heads)
            self.heads.append(nn.Linear(config.feature_dim,
                                        config.latent_dim(cbr), rng))

    def head_for(self, cbr: float) -> nn.Linear:
        try:
            return self.heads[self._head_index[float(cbr)]]
        except KeyError:
            raise ConfigError(
                f"no head registered for cbr={cbr}; available: "
                f"{sorted(self._head_index)}") from None

    def forward(self, x: np.ndarray, cbr: float) -> np.ndarray:
        """Raw (pre-normalization) latents for a (B, C, H, W) batch."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 4 or x.shape[1:] != (self.config.input_channels,
                                          self.config.image_size,
                                          self.config.image_size):
            raise ConfigError(f"expected (B, {self.config.input_channels}, "
                              f"{self.config.image_size}, "
                              f"{self.config.image_size}), got {x.shape}")
        head = self.head_for(cbr)
        feat = self.trunk(x)
        self._feat_shape = feat.shape
        # Cache the index, not the module: module-valued attributes
        # register as children and would alias the head's parameters.
        self._used_head_idx = self._head_index[float(cbr)]
        return head(feat.reshape(x.shape[0], -1))

    def backward(self, grad_latent: np.ndarray) -> np.ndarray:
        dfeat = self.heads[self._used_head_idx].backward(grad_latent)
        return self.trunk.backward(dfeat.reshape(self._feat_shape))

    def encode(self, x0: np.ndarray, cbr: float) -> SemanticLatent:
        """Single-image convenience wrapper returning a power-normalized
        latent.  Runs in the module's current train/eval mode."""
        x0 = np.asarray(x0, dtype=float)
        if x0.ndim == 3:
            x0 = x0[None]
        if x0.shape[0] != 1:
            raise ConfigError("encode takes one image; use forward for "
                              "batches")
        raw = self.forward(x0, cbr)[0]
        return normalize_power(raw, cbr=float(cbr))


def pad_rows(values: np.ndarray, target_shape):
    """Batched pad-and-reshape core: (B, L) -> data (B, C, H, W), mask."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ConfigError(f"expected (B, L), got {v.shape}")
    numel = int(np.prod(target_shape))
    if v.shape[1] > numel:
        raise ConfigError(f"latent length {v.shape[1]} exceeds target "
                          f"{tuple(target_shape)} = {numel} entries")
    b, length = v.shape
    data = np.zeros((b, numel))
    data[:, :length] = v
    mask = np.zeros(numel)
    mask[:length] = 1.0
    return (data.reshape((b,) + tuple(target_shape)),
            np.broadcast_to(mask.reshape(target_shape),
                            (b,) + tuple(target_shape)).copy())


def pad_and_reshape(latent: SemanticLatent, target_shape) -> ConditionTensor:
    """Lift a latent to image spatial dims, zero-padding the tail."""
    data, mask = pad_rows(latent.values[None], target_shape)
    return ConditionTensor(data[0], mask[0], latent.values.size)


def extract_latent(cond: ConditionTensor) -> np.ndarray:
    """Inverse of pad_and_reshape: recover the flat latent entries."""
    flat = cond.data.reshape(cond.data.shape[:-3] + (-1,))
    return flat[..., :cond.source_len]


def adaptive_head_select(cbr_list, epoch_rng: np.random.Generator) -> float:
    """Uniform per-epoch bandwidth draw for the adaptive regime."""
    if not len(cbr_list):
        raise ConfigError("cbr_list must not be empty")
    return float(cbr_list[int(epoch_rng.integers(0, len(cbr_list)))])
