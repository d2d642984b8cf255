"""Time-conditioned U-Net predicting the clean image from (x_t, cond).

The conditioning tensor is channel-concatenated with the noisy image,
so the first convolution sees 2*image_channels inputs.  Each residual
block injects a projected sinusoidal time embedding after its first
convolution.  Downsampling halves the spatial dims between stages and
the mirrored upsampling path concatenates skip connections.  The final
1x1 convolution is zero-initialized: an untrained network predicts 0,
which keeps early training stable.

``backward`` returns gradients for both network inputs, (dx_t, dcond);
the conditioning gradient is what lets the encoder train jointly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .diffusion import ConditionTensor
from .errors import ConfigError


def sinusoidal_time_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sin/cos embedding with log-spaced frequencies.

    Accepts a scalar step or a vector of steps; returns (..., dim).
    """
    if dim % 2 != 0:
        raise ConfigError(f"embedding dim must be even, got {dim}")
    t = np.asarray(t, dtype=float)
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    angles = t[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


@dataclass(frozen=True)
class DenoiserConfig:
    base_dim: int = 32
    dim_mults: tuple = (1, 2, 4)
    image_channels: int = 1
    time_dim: int | None = None
    use_attention: bool = False

    def __post_init__(self):
        if self.base_dim < 1 or len(self.dim_mults) < 1:
            raise ConfigError("need base_dim >= 1 and at least one stage")
        if self.time_dim is None:
            object.__setattr__(self, "time_dim", 4 * self.base_dim)

    @property
    def in_channels(self) -> int:
        return 2 * self.image_channels

    @property
    def stage_dims(self) -> tuple:
        return tuple(self.base_dim * m for m in self.dim_mults)

    def min_spatial(self) -> int:
        return 2 ** (len(self.dim_mults) - 1)


class TimeMLP(nn.Module):
    def __init__(self, base_dim: int, time_dim: int, rng):
        super().__init__()
        self.fc1 = nn.Linear(base_dim, time_dim, rng)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(time_dim, time_dim, rng)

    def forward(self, emb: np.ndarray) -> np.ndarray:
        return self.fc2(self.act(self.fc1(emb)))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.fc1.backward(self.act.backward(self.fc2.backward(grad_out)))


class ResBlock(nn.Module):
    """conv-norm-act twice with a time-embedding shift in between."""

    def __init__(self, c_in: int, c_out: int, time_dim: int, rng):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng, pad=1)
        self.norm1 = nn.GroupNorm(1, c_out)
        self.act1 = nn.GELU()
        self.time_proj = nn.Linear(time_dim, c_out, rng)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng, pad=1)
        self.norm2 = nn.GroupNorm(1, c_out)
        self.act2 = nn.GELU()
        self.skip = nn.Conv2d(c_in, c_out, 1, rng) if c_in != c_out \
            else nn.Identity()

    def forward(self, x: np.ndarray, temb: np.ndarray) -> np.ndarray:
        h = self.act1(self.norm1(self.conv1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.act2(self.norm2(self.conv2(h)))
        return h + self.skip(x)

    def backward(self, grad_out: np.ndarray):
        """Returns (dx, dtemb)."""
        dx_skip = self.skip.backward(grad_out)
        dh = self.conv2.backward(self.norm2.backward(
            self.act2.backward(grad_out)))
        dtemb = self.time_proj.backward(dh.sum(axis=(2, 3)))
        dx = self.conv1.backward(self.norm1.backward(self.act1.backward(dh)))
        return dx + dx_skip, dtemb


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class LinearAttention(nn.Module):
    """Single-head linear-complexity attention over spatial positions.

    Keys are softmaxed over positions, so the context matrix is a
    c-by-c summary gathered once and broadcast to every query: cost is
    linear in H*W.  Residual output.
    """

    def __init__(self, channels: int, rng):
        super().__init__()
        self.to_q = nn.Conv2d(channels, channels, 1, rng)
        self.to_k = nn.Conv2d(channels, channels, 1, rng)
        self.to_v = nn.Conv2d(channels, channels, 1, rng)
        self.to_out = nn.Conv2d(channels, channels, 1, rng)
        self.scale = channels ** -0.5

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        q = self.to_q(x).reshape(b, c, h * w) * self.scale
        k = self.to_k(x).reshape(b, c, h * w)
        v = self.to_v(x).reshape(b, c, h * w)
        a = _softmax(k, axis=2)
        ctx = np.einsum("bcn,bdn->bcd", a, v)
        out = np.einsum("bcd,bcn->bdn", ctx, q)
        self._cache = (q, a, v, ctx, (b, c, h, w))
        return x + self.to_out(out.reshape(b, c, h, w))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        q, a, v, ctx, (b, c, h, w) = self._cache
        g = self.to_out.backward(grad_out).reshape(b, c, h * w)
        dctx = np.einsum("bdn,bcn->bcd", g, q)
        dq = np.einsum("bcd,bdn->bcn", ctx, g) * self.scale
        da = np.einsum("bcd,bdn->bcn", dctx, v)
        dv = np.einsum("bcd,bcn->bdn", dctx, a)
        dk = a * (da - (da * a).sum(axis=2, keepdims=True))
        dx = self.to_q.backward(dq.reshape(b, c, h, w))
        dx += self.to_k.backward(dk.reshape(b, c, h, w))
        dx += self.to_v.backward(dv.reshape(b, c, h, w))
        return dx + grad_out


class ConditionalUNet(nn.Module):
    def __init__(self, config: DenoiserConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        dims = config.stage_dims
        self.time_mlp = TimeMLP(config.base_dim, config.time_dim, rng)
        self.init_conv = nn.Conv2d(config.in_channels, dims[0], 3, rng, pad=1)
        self.down_res = nn.ModuleList(
            [ResBlock(dims[i], dims[i], config.time_dim, rng)
             for i in range(len(dims) - 1)])
        self.downs = nn.ModuleList(
            [nn.Conv2d(dims[i], dims[i + 1], 4, rng, stride=2, pad=1)
             for i in range(len(dims) - 1)])
        self.mid1 = ResBlock(dims[-1], dims[-1], config.time_dim, rng)
        self.mid_attn = LinearAttention(dims[-1], rng) \
            if config.use_attention else None
        self.mid2 = ResBlock(dims[-1], dims[-1], config.time_dim, rng)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(dims[i + 1], dims[i], 4, rng, stride=2, pad=1)
             for i in reversed(range(len(dims) - 1))])
        self.up_res = nn.ModuleList(
            [ResBlock(2 * dims[i], dims[i], config.time_dim, rng)
             for i in reversed(range(len(dims) - 1))])
        self.final = nn.Conv2d(dims[0], config.image_channels, 1, rng,
                               zero_init=True)

    def forward(self, x_t: np.ndarray, cond_data: np.ndarray, t) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=float)
        cond_data = np.asarray(cond_data, dtype=float)
        if x_t.ndim != 4:
            raise ConfigError(f"expected (B, C, H, W), got {x_t.shape}")
        if cond_data.ndim == 3:
            cond_data = np.broadcast_to(cond_data, x_t.shape)
        if cond_data.shape != x_t.shape:
            raise ConfigError(f"condition {cond_data.shape} does not match "
                              f"input {x_t.shape}")
        if x_t.shape[1] != self.config.image_channels:
            raise ConfigError(f"expected {self.config.image_channels} "
                              f"channels, got {x_t.shape[1]}")
        if x_t.shape[2] % self.config.min_spatial() or \
                x_t.shape[3] % self.config.min_spatial():
            raise ConfigError(f"spatial dims {x_t.shape[2:]} must divide by "
                              f"{self.config.min_spatial()}")
        b = x_t.shape[0]
        t = np.asarray(t)
        if t.ndim == 0:
            t = np.full(b, int(t))
        emb = sinusoidal_time_embedding(t, self.config.base_dim)
        temb = self.time_mlp(emb)

        h = self.init_conv(np.concatenate([x_t, cond_data], axis=1))
        skips = []
        for res, down in zip(self.down_res, self.downs):
            h = res(h, temb)
            skips.append(h)
            h = down(h)
        h = self.mid1(h, temb)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        h = self.mid2(h, temb)
        for up, res in zip(self.ups, self.up_res):
            h = up(h)
            h = np.concatenate([h, skips.pop()], axis=1)
            h = res(h, temb)
        return self.final(h)

    def denoise(self, x_t: np.ndarray, cond: ConditionTensor, t) -> np.ndarray:
        """ConditionTensor-typed entry point; adds/strips a batch axis
        for single images."""
        x_t = np.asarray(x_t, dtype=float)
        single = x_t.ndim == 3
        if single:
            x_t = x_t[None]
        out = self.forward(x_t, cond.data, t)
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray):
        """Returns (dx_t, dcond); time-MLP grads accumulate internally."""
        dtemb = np.zeros((grad_out.shape[0], self.config.time_dim))
        h = self.final.backward(np.asarray(grad_out, dtype=float))
        dskips = []
        for up, res in zip(reversed(list(self.ups)),
                           reversed(list(self.up_res))):
            h, dt = res.backward(h)
            ch = h.shape[1] // 2
            dskips.append(h[:, ch:])
            h = up.backward(h[:, :ch])
            dtemb += dt
        h, dt = self.mid2.backward(h)
        dtemb += dt
        if self.mid_attn is not None:
            h = self.mid_attn.backward(h)
        h, dt = self.mid1.backward(h)
        dtemb += dt
        for res, down in zip(reversed(list(self.down_res)),
                             reversed(list(self.downs))):
            h = down.backward(h)
            h = h + dskips.pop()
            h, dt = res.backward(h)
            dtemb += dt
        self.time_mlp.backward(dtemb)
        dcat = self.init_conv.backward(h)
        c = self.config.image_channels
        return dcat[:, :c], dcat[:, c:]
