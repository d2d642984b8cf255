"""Minimal neural-network substrate in numpy with explicit backprop.

Every layer implements ``forward`` and ``backward``; gradients
accumulate into ``Parameter.grad`` so shared modules and multi-branch
graphs work without extra bookkeeping.  Forward passes cache the
activations backward needs, which makes module *instances* single-user
per pass; parameters themselves are read-only during forward and can
be shared freely.

Convolutions are im2col matmuls.  ``gather_windows``/``scatter_windows``
are exact adjoints of each other; Conv2d uses gather forward and
scatter backward, ConvTranspose2d the reverse.  All arithmetic is
float64, which keeps central finite differences meaningful as an
independent check on every backward here.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import ConfigError


class Parameter:
    """A trainable tensor plus its accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=float)
        self.grad = np.zeros_like(self.data)


class Module:
    """Base class: auto-registers Parameter/Module attributes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif name in self._buffers:
            self._buffers[name] = np.asarray(value, dtype=float)
            value = self._buffers[name]
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        """Track non-trainable state (e.g. running stats) for checkpoints."""
        self._buffers[name] = np.asarray(value, dtype=float)
        object.__setattr__(self, name, self._buffers[name])

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield f"{prefix}{name}", b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict:
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out.update({f"buffer:{name}": b.copy()
                    for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        own.update({f"buffer:{name}": b for name, b in self.named_buffers()})
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ConfigError(f"state dict mismatch; missing={missing}, "
                              f"unexpected={extra}")
        for name, entry in own.items():
            target = entry.data if isinstance(entry, Parameter) else entry
            arr = np.asarray(state[name], dtype=float)
            if arr.shape != target.shape:
                raise ConfigError(f"entry {name} has shape {target.shape}, "
                                  f"checkpoint has {arr.shape}")
            target[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, f"m{len(self._items)}", module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = ModuleList(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def backward(self, grad_out):
        for layer in reversed(list(self.layers)):
            grad_out = layer.backward(grad_out)
        return grad_out


def fan_in_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        if zero_init:
            w = np.zeros((in_features, out_features))
        else:
            w = fan_in_normal(rng, (in_features, out_features), in_features)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = np.asarray(x, dtype=float)
        return self._x @ self.weight.data + self.bias.data

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = np.asarray(grad_out, dtype=float)
        self.weight.grad += self._x.T @ g
        self.bias.grad += g.sum(axis=0)
        return g @ self.weight.data.T


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ConfigError(f"window {k} with stride {stride}, pad {pad} "
                          f"does not fit input of size {size}")
    return out


def gather_windows(x: np.ndarray, k: int, stride: int, pad: int,
                   out_h: int, out_w: int) -> np.ndarray:
    """(B, C, H, W) -> (B, out_h*out_w, C*k*k) patch matrix."""
    b, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, out_h * out_w, c * k * k)
    return np.ascontiguousarray(cols)


def scatter_windows(cols: np.ndarray, k: int, stride: int, pad: int,
                    shape, out_h: int, out_w: int) -> np.ndarray:
    """Exact adjoint of gather_windows; scatter-adds patches back."""
    b, c, h, w = shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    # Contiguous per-tap planes: the k*k strided adds then stream
    # through memory instead of striding across the patch axis.
    cols6 = np.ascontiguousarray(
        cols.reshape(b, out_h, out_w, c, k, k).transpose(0, 3, 4, 5, 1, 2))
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * out_h:stride,
               kj:kj + stride * out_w:stride] += cols6[:, :, ki, kj]
    if pad:
        xp = xp[:, :, pad:-pad, pad:-pad]
    return xp


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, k: int,
                 rng: np.random.Generator, stride: int = 1, pad: int = 0,
                 zero_init: bool = False):
        super().__init__()
        fan_in = in_channels * k * k
        if zero_init:
            w = np.zeros((out_channels, in_channels, k, k))
        else:
            w = fan_in_normal(rng, (out_channels, in_channels, k, k), fan_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels))
        self.k, self.stride, self.pad = k, stride, pad
        self.in_channels, self.out_channels = in_channels, out_channels

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ConfigError(f"expected {self.in_channels} channels, got {c}")
        oh = conv_out_size(h, self.k, self.stride, self.pad)
        ow = conv_out_size(w, self.k, self.stride, self.pad)
        cols = gather_windows(x, self.k, self.stride, self.pad, oh, ow)
        wf = self.weight.data.reshape(self.out_channels, -1).T
        y = cols @ wf + self.bias.data
        self._cache = (cols, x.shape, oh, ow)
        return y.reshape(b, oh, ow, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cols, x_shape, oh, ow = self._cache
        b = x_shape[0]
        gy = np.asarray(grad_out, dtype=float)
        gy = gy.transpose(0, 2, 3, 1).reshape(b, oh * ow, self.out_channels)
        wf = self.weight.data.reshape(self.out_channels, -1).T
        # One GEMM over the merged batch*position axis.
        dwf = cols.reshape(-1, cols.shape[2]).T @ gy.reshape(-1, gy.shape[2])
        self.weight.grad += dwf.T.reshape(self.weight.data.shape)
        self.bias.grad += gy.sum(axis=(0, 1))
        dcols = gy @ wf.T
        return scatter_windows(dcols, self.k, self.stride, self.pad,
                               x_shape, oh, ow)


class ConvTranspose2d(Module):
    """Stride-s transposed convolution; output (H-1)*s - 2p + k."""

    def __init__(self, in_channels: int, out_channels: int, k: int,
                 rng: np.random.Generator, stride: int = 1, pad: int = 0):
        super().__init__()
        fan_in = in_channels * k * k
        self.weight = Parameter(fan_in_normal(
            rng, (in_channels, out_channels, k, k), fan_in))
        self.bias = Parameter(np.zeros(out_channels))
        self.k, self.stride, self.pad = k, stride, pad
        self.in_channels, self.out_channels = in_channels, out_channels

    def out_size(self, size: int) -> int:
        out = (size - 1) * self.stride - 2 * self.pad + self.k
        if out < 1:
            raise ConfigError("transposed conv output collapsed to nothing")
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ConfigError(f"expected {self.in_channels} channels, got {c}")
        oh, ow = self.out_size(h), self.out_size(w)
        xrows = x.transpose(0, 2, 3, 1).reshape(b, h * w, c)
        wf = self.weight.data.reshape(c, -1)
        cols = xrows @ wf
        y = scatter_windows(cols, self.k, self.stride, self.pad,
                            (b, self.out_channels, oh, ow), h, w)
        self._cache = (xrows, (b, c, h, w), oh, ow)
        return y + self.bias.data[None, :, None, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        xrows, (b, c, h, w), oh, ow = self._cache
        gy = np.asarray(grad_out, dtype=float)
        dcols = gather_windows(gy, self.k, self.stride, self.pad, h, w)
        wf = self.weight.data.reshape(c, -1)
        dw = xrows.reshape(-1, c).T @ dcols.reshape(-1, dcols.shape[2])
        self.weight.grad += dw.reshape(self.weight.data.shape)
        self.bias.grad += gy.sum(axis=(0, 2, 3))
        dx = dcols @ wf.T
        return dx.reshape(b, h, w, c).transpose(0, 3, 1, 2)


def _norm_backward(grad_hat: np.ndarray, x_hat: np.ndarray,
                   inv_std: np.ndarray, axes) -> np.ndarray:
    # Standard normalization backward over the statistic axes:
    # dx = inv_std * (g - mean(g) - x_hat * mean(g * x_hat)).
    m_g = grad_hat.mean(axis=axes, keepdims=True)
    m_gx = (grad_hat * x_hat).mean(axis=axes, keepdims=True)
    return inv_std * (grad_hat - m_g - x_hat * m_gx)


class GroupNorm(Module):
    def __init__(self, num_groups: int, channels: int, eps: float = 1e-5):
        super().__init__()
        if channels % num_groups != 0:
            raise ConfigError(f"{channels} channels not divisible into "
                              f"{num_groups} groups")
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.num_groups, self.channels, self.eps = num_groups, channels, eps

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        b, c, h, w = x.shape
        g = self.num_groups
        xg = x.reshape(b, g, c // g, h, w)
        mean = xg.mean(axis=(2, 3, 4), keepdims=True)
        var = xg.var(axis=(2, 3, 4), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (xg - mean) * inv_std
        self._cache = (x_hat, inv_std, (b, c, h, w))
        y = x_hat.reshape(b, c, h, w)
        return y * self.gamma.data[None, :, None, None] \
            + self.beta.data[None, :, None, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_hat, inv_std, (b, c, h, w) = self._cache
        gy = np.asarray(grad_out, dtype=float)
        flat_hat = x_hat.reshape(b, c, h, w)
        self.gamma.grad += (gy * flat_hat).sum(axis=(0, 2, 3))
        self.beta.grad += gy.sum(axis=(0, 2, 3))
        ghat = (gy * self.gamma.data[None, :, None, None]) \
            .reshape(b, self.num_groups, c // self.num_groups, h, w)
        dx = _norm_backward(ghat, x_hat, inv_std, axes=(2, 3, 4))
        return dx.reshape(b, c, h, w)


class BatchNorm2d(Module):
    """Per-channel batch normalization with running eval statistics."""

    def __init__(self, channels: int, eps: float = 1e-5,
                 momentum: float = 0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps, self.momentum = eps, momentum
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.training:
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            var = x.var(axis=(0, 2, 3), keepdims=True)
            m = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var.reshape(-1) * m / max(m - 1, 1)
            self.running_mean += self.momentum * (x.mean(axis=(0, 2, 3))
                                                  - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
        else:
            mean = self.running_mean[None, :, None, None]
            var = self.running_var[None, :, None, None]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std)
        return x_hat * self.gamma.data[None, :, None, None] \
            + self.beta.data[None, :, None, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_hat, inv_std = self._cache
        gy = np.asarray(grad_out, dtype=float)
        self.gamma.grad += (gy * x_hat).sum(axis=(0, 2, 3))
        self.beta.grad += gy.sum(axis=(0, 2, 3))
        ghat = gy * self.gamma.data[None, :, None, None]
        if self.training:
            return _norm_backward(ghat, x_hat, inv_std, axes=(0, 2, 3))
        return ghat * inv_std


class ReLU(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.asarray(grad_out, dtype=float) * self._mask


def gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + special.erf(x / np.sqrt(2.0))) + x * phi


class GELU(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = np.asarray(x, dtype=float)
        return gelu(self._x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.asarray(grad_out, dtype=float) * gelu_grad(self._x)


class Identity(Module):
    def forward(self, x):
        return x

    def backward(self, grad_out):
        return grad_out


class Adam:
    """Adam with bias correction; deterministic parameter order."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m += (1.0 - self.beta1) * (p.grad - m)
            v += (1.0 - self.beta2) * (p.grad ** 2 - v)
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0
