"""Joint end-to-end training loops for the three pipelines.

The diffusion pipeline backpropagates through the whole receive chain:
denoiser gradients flow into the conditioning tensor, back through the
zero-padding, through the additive channel (identity Jacobian for the
noise term), through the power-normalization projection, and into the
encoder heads and trunk.  The autoencoder and VAE benchmarks reuse the
same channel stage with their own decoders.

Randomness is split into named substreams derived from the master
seed, so training trajectories are bit-reproducible: data order,
regime draws, diffusion draws, channel draws, and reparameterization
draws never share a stream.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .baselines import MatchedDecoder, VaeEncoder, vae_kl
from .channel import (awgn_rows, normalize_rows, normalize_rows_backward,
                      sinr_db, snr_to_sigma2)
from .data import Dataset, batch_iter
from .denoiser import ConditionalUNet
from .diffusion import ConditionTensor, forward_diffuse, forward_kernel_coeffs, sample
from .encoder import SemanticEncoder, adaptive_head_select, pad_rows
from .errors import ConfigError, NumericalError
from .metrics import MetricReport, batch_metrics, denormalize
from .schedule import DiffusionSchedule

PIPELINES = ("cdiff", "ae", "vae")
REGIMES = ("fixed", "adaptive")

# Substream labels appended to the master seed.
_STREAM_DATA = 0
_STREAM_REGIME = 1
_STREAM_DIFFUSION = 2
_STREAM_CHANNEL = 3
_STREAM_REPARAM = 4


@dataclass(frozen=True)
class TrainConfig:
    pipeline: str = "cdiff"
    regime: str = "fixed"
    cbr: float = 0.3
    cbr_list: tuple = (0.2, 0.25, 0.3, 0.35, 0.4, 0.45)
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    train_snr_db: tuple = (-10.0, 10.0)
    ema_decay: float = 0.995
    seed: int = 0
    power: float = 1.0

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline {self.pipeline!r} not in {PIPELINES}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime {self.regime!r} not in {REGIMES}")
        lo, hi = self.train_snr_db
        if not lo <= hi:
            raise ConfigError(f"empty SNR range {self.train_snr_db}")
        cbrs = self.active_cbrs()
        if not cbrs:
            raise ConfigError("no CBR values configured")
        for cbr in cbrs:
            if not (0.0 < cbr < 1.0):
                raise ConfigError(f"cbr {cbr} outside (0, 1)")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ConfigError(f"ema_decay {self.ema_decay} outside [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    def active_cbrs(self) -> tuple:
        return tuple(self.cbr_list) if self.regime == "adaptive" \
            else (self.cbr,)


@dataclass
class EmaState:
    """Shadow copies of all trainable parameters."""

    decay: float
    shadow: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, named_params, decay: float) -> "EmaState":
        return cls(decay=decay,
                   shadow={k: p.data.copy() for k, p in named_params})


def ema_update(state: EmaState, named_params) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * live, in place."""
    for name, p in named_params:
        s = state.shadow[name]
        if s.shape != p.data.shape:
            raise ConfigError(f"EMA shape mismatch for {name}: "
                              f"{s.shape} vs {p.data.shape}")
        s += (1.0 - state.decay) * (p.data - s)
    return state


def _mask_rows(values: np.ndarray, keep_prob: float,
               rng: np.random.Generator, power: float):
    """Batched symbol dropping + renormalization for CBR mismatch."""
    b, length = values.shape
    keep = rng.random((b, length // 2)) < keep_prob
    masked = values * np.repeat(keep, 2, axis=1)
    scaled, _ = normalize_rows(masked, power)
    return scaled


class Trainer:
    """Shared training/eval scaffolding; subclasses wire one pipeline.

    ``eval_used_ema`` instruments which weights served the last
    evaluation; training steps always run on live weights and assert
    the EMA swap is not active.
    """

    pipeline = "base"

    def __init__(self, config: TrainConfig, schedule: DiffusionSchedule):
        self.config = config
        self.schedule = schedule
        self.rng_data = np.random.default_rng([config.seed, _STREAM_DATA])
        self.rng_regime = np.random.default_rng([config.seed, _STREAM_REGIME])
        self.rng_diffusion = np.random.default_rng(
            [config.seed, _STREAM_DIFFUSION])
        self.rng_channel = np.random.default_rng(
            [config.seed, _STREAM_CHANNEL])
        self.rng_reparam = np.random.default_rng(
            [config.seed, _STREAM_REPARAM])
        self.step = 0
        self.log_rows = []
        self.timing_ms = []
        self._ema_active = False
        self.eval_used_ema = None
        self.modules: dict[str, nn.Module] = {}
        self.optimizer: nn.Adam | None = None
        self.ema: EmaState | None = None

    # -- assembled by subclasses ------------------------------------
    def _finish_init(self):
        params = list(self._named_params())
        self.optimizer = nn.Adam([p for _, p in params], lr=self.config.lr)
        self.ema = EmaState.from_params(params, self.config.ema_decay)

    def _named_params(self):
        for mod_name, module in sorted(self.modules.items()):
            for name, p in module.named_parameters():
                yield f"{mod_name}.{name}", p

    # -- channel stage shared by every pipeline ----------------------
    def _channel(self, raw: np.ndarray, sigma2, rng: np.random.Generator,
                 keep_prob: float = 1.0, interference=None):
        """normalize -> (mask) -> (mix) -> awgn over batched latents.

        Returns (noisy latents, cache for backward).  The mask and mix
        stages are evaluation-only; training always runs with
        keep_prob=1 and no interference, which keeps the backward
        Jacobian the plain normalization projection.
        """
        normed, norms = normalize_rows(raw, self.config.power)
        sent = normed
        if keep_prob < 1.0:
            sent = _mask_rows(sent, keep_prob, rng, self.config.power)
        if interference is not None:
            coeffs, others = interference
            mixed = coeffs[0] * sent
            for c, other in zip(coeffs[1:], others):
                mixed = mixed + c * other
            sent = mixed
        noisy = awgn_rows(sent, sigma2, rng)
        return noisy, (raw, norms)

    def _channel_backward(self, dnoisy: np.ndarray, cache) -> np.ndarray:
        raw, norms = cache
        return normalize_rows_backward(dnoisy, raw, norms, self.config.power)

    def _draw_snr(self, n: int) -> np.ndarray:
        lo, hi = self.config.train_snr_db
        return self.rng_channel.uniform(lo, hi, size=n)

    def _epoch_cbr(self) -> float:
        if self.config.regime == "adaptive":
            return adaptive_head_select(self.config.cbr_list, self.rng_regime)
        return self.config.cbr

    # -- EMA ----------------------------------------------------------
    @contextmanager
    def ema_weights(self):
        """Temporarily swap EMA shadows into the live parameters."""
        params = dict(self._named_params())
        backup = {k: p.data.copy() for k, p in params.items()}
        for k, p in params.items():
            p.data[...] = self.ema.shadow[k]
        self._ema_active = True
        try:
            yield
        finally:
            for k, p in params.items():
                p.data[...] = backup[k]
            self._ema_active = False

    def _set_mode(self, training: bool):
        for module in self.modules.values():
            module.train(training)

    # -- training loop ------------------------------------------------
    def train_step(self, batch: np.ndarray, cbr: float) -> float:
        if self._ema_active:
            raise NumericalError("train_step entered with EMA weights "
                                 "swapped in; training must use live "
                                 "parameters")
        self._set_mode(True)
        self.optimizer.zero_grad()
        loss, diag = self._step(np.asarray(batch, dtype=float), cbr)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at step {self.step}: "
                                 f"{diag}")
        self.optimizer.step()
        ema_update(self.ema, self._named_params())
        self.step += 1
        return float(loss)

    def fit(self, dataset: Dataset):
        """Run the configured number of epochs; returns the log rows."""
        for epoch in range(self.config.epochs):
            cbr = self._epoch_cbr()
            start = time.perf_counter()
            for batch in batch_iter(dataset, self.config.batch_size,
                                    self.rng_data):
                loss = self.train_step(batch, cbr)
                row = self._last_diag
                self.log_rows.append({
                    "step": self.step, "epoch": epoch + 1,
                    "loss": loss, "snr_db": row["snr_db"], "cbr": cbr})
            self.timing_ms.append(
                (time.perf_counter() - start) * 1000.0)
        return self.log_rows

    # -- evaluation ----------------------------------------------------
    def reconstruct(self, images: np.ndarray, cbr_train: float,
                    snr_db: float, rng: np.random.Generator,
                    cbr_eval: float | None = None, interference=None,
                    use_ema: bool = True) -> np.ndarray:
        """Full receive-chain reconstruction of an image batch.

        ``cbr_eval`` below the trained bandwidth engages stochastic
        symbol dropping; ``interference`` is (coeffs, other_latents).
        """
        images = np.asarray(images, dtype=float)
        keep_prob = 1.0
        if cbr_eval is not None and cbr_eval != cbr_train:
            if cbr_eval > cbr_train:
                raise ConfigError(f"eval cbr {cbr_eval} above trained "
                                  f"{cbr_train}; only masking down is "
                                  "supported")
            keep_prob = cbr_eval / cbr_train
        sigma2 = snr_to_sigma2(snr_db, self.config.power)

        def run():
            self._set_mode(False)
            out = self._reconstruct(images, cbr_train, sigma2, rng,
                                    keep_prob, interference)
            return np.clip(out, -1.0, 1.0)

        if use_ema:
            with self.ema_weights():
                self.eval_used_ema = True
                return run()
        self.eval_used_ema = False
        return run()

    def evaluate(self, dataset: Dataset, snr_db: float,
                 rng: np.random.Generator, cbr_train: float | None = None,
                 cbr_eval: float | None = None, n_samples: int | None = None,
                 interference=None, use_ema: bool = True) -> MetricReport:
        """Metrics over the first ``n_samples`` images of a split."""
        images = dataset.images
        if n_samples is not None:
            images = images[:n_samples]
        cbr_train = self.config.cbr if cbr_train is None else cbr_train
        x_hat = self.reconstruct(images, cbr_train, snr_db, rng,
                                 cbr_eval=cbr_eval, interference=interference,
                                 use_ema=use_ema)
        return batch_metrics(denormalize(images), denormalize(x_hat))

    # subclass hooks
    def _step(self, batch, cbr):
        raise NotImplementedError

    def _reconstruct(self, images, cbr, sigma2, rng, keep_prob, interference):
        raise NotImplementedError


class DiffusionTrainer(Trainer):
    """Joint encoder + conditional denoiser training."""

    pipeline = "cdiff"

    def __init__(self, config: TrainConfig, schedule: DiffusionSchedule,
                 encoder: SemanticEncoder, denoiser: ConditionalUNet,
                 noise_mode: str = "forward"):
        super().__init__(config, schedule)
        self.encoder = encoder
        self.denoiser = denoiser
        self.noise_mode = noise_mode
        self.modules = {"encoder": encoder, "denoiser": denoiser}
        self._finish_init()

    def _step(self, x0: np.ndarray, cbr: float):
        b = x0.shape[0]
        shape = x0.shape[1:]
        t = self.rng_diffusion.integers(1, self.schedule.T + 1, size=b)
        snr = self._draw_snr(b)
        sigma2 = snr_to_sigma2(snr, self.config.power)

        raw = self.encoder.forward(x0, cbr)
        noisy, chan_cache = self._channel(raw, sigma2, self.rng_channel)
        cond_data, cond_mask = pad_rows(noisy, shape)
        cond = ConditionTensor(cond_data, cond_mask, noisy.shape[1])
        ds = forward_diffuse(x0, cond, t, self.schedule, self.rng_diffusion)
        x0_hat = self.denoiser.forward(ds.x_t, cond.data, t)

        diff = x0_hat - x0
        loss = float(np.sum(diff ** 2) / b)
        self._last_diag = {"snr_db": float(np.mean(snr)),
                           "t": t.tolist(), "loss": loss}

        dx0_hat = 2.0 * diff / b
        dxt, dcond = self.denoiser.backward(dx0_hat)
        # The condition also feeds x_t through the forward kernel mean.
        _, b_coef, _ = forward_kernel_coeffs(self.schedule, t, x0.ndim)
        dcond = dcond + b_coef * dxt
        dnoisy = dcond.reshape(b, -1)[:, :noisy.shape[1]]
        draw = self._channel_backward(dnoisy, chan_cache)
        self.encoder.backward(draw)
        return loss, self._last_diag

    def _reconstruct(self, images, cbr, sigma2, rng, keep_prob, interference):
        raw = self.encoder.forward(images, cbr)
        noisy, _ = self._channel(raw, sigma2, rng, keep_prob, interference)
        cond_data, cond_mask = pad_rows(noisy, images.shape[1:])
        cond = ConditionTensor(cond_data, cond_mask, noisy.shape[1])

        def denoise_fn(x_t, c, t):
            return self.denoiser.forward(x_t, c.data, t)

        return sample(cond, denoise_fn, self.schedule, rng,
                      noise_mode=self.noise_mode)


class AutoencoderTrainer(Trainer):
    """Matched encoder/decoder benchmark over the same channel."""

    pipeline = "ae"

    def __init__(self, config: TrainConfig, schedule: DiffusionSchedule,
                 encoder: SemanticEncoder, decoder: MatchedDecoder):
        super().__init__(config, schedule)
        self.encoder = encoder
        self.decoder = decoder
        self.modules = {"encoder": encoder, "decoder": decoder}
        self._finish_init()

    def _step(self, x0: np.ndarray, cbr: float):
        b = x0.shape[0]
        snr = self._draw_snr(b)
        sigma2 = snr_to_sigma2(snr, self.config.power)
        raw = self.encoder.forward(x0, cbr)
        noisy, chan_cache = self._channel(raw, sigma2, self.rng_channel)
        x_hat = self.decoder.forward(noisy, cbr)
        diff = x_hat - x0
        loss = float(np.mean(diff ** 2))
        self._last_diag = {"snr_db": float(np.mean(snr)), "loss": loss}
        dnoisy = self.decoder.backward(2.0 * diff / diff.size)
        self.encoder.backward(self._channel_backward(dnoisy, chan_cache))
        return loss, self._last_diag

    def _reconstruct(self, images, cbr, sigma2, rng, keep_prob, interference):
        raw = self.encoder.forward(images, cbr)
        noisy, _ = self._channel(raw, sigma2, rng, keep_prob, interference)
        return self.decoder.forward(noisy, cbr)


class VaeTrainer(Trainer):
    """Variational benchmark; evaluation decodes the noisy mean latent."""

    pipeline = "vae"

    def __init__(self, config: TrainConfig, schedule: DiffusionSchedule,
                 encoder: VaeEncoder, decoder: MatchedDecoder):
        super().__init__(config, schedule)
        self.encoder = encoder
        self.decoder = decoder
        self.modules = {"encoder": encoder, "decoder": decoder}
        self._finish_init()

    def _step(self, x0: np.ndarray, cbr: float):
        b = x0.shape[0]
        snr = self._draw_snr(b)
        sigma2 = snr_to_sigma2(snr, self.config.power)
        head = self.encoder.forward(x0, cbr)
        eps = self.rng_reparam.standard_normal(head.mu.shape)
        sigma = np.exp(head.log_var / 2.0)
        z = head.mu + sigma * eps
        noisy, chan_cache = self._channel(z, sigma2, self.rng_channel)
        x_hat = self.decoder.forward(noisy, cbr)
        diff = x_hat - x0
        mse = float(np.mean(diff ** 2))
        kl = vae_kl(head)
        loss = mse + kl
        self._last_diag = {"snr_db": float(np.mean(snr)), "loss": loss,
                           "mse": mse, "kl": kl}
        dnoisy = self.decoder.backward(2.0 * diff / diff.size)
        dz = self._channel_backward(dnoisy, chan_cache)
        dmu = dz + head.mu / b
        dlog_var = dz * eps * sigma * 0.5 \
            + 0.5 * (np.exp(head.log_var) - 1.0) / b
        self.encoder.backward(dmu, dlog_var)
        return loss, self._last_diag

    def _reconstruct(self, images, cbr, sigma2, rng, keep_prob, interference):
        head = self.encoder.forward(images, cbr)
        noisy, _ = self._channel(head.mu, sigma2, rng, keep_prob,
                                 interference)
        return self.decoder.forward(noisy, cbr)


def interference_latents(trainer: Trainer, images: np.ndarray,
                         cbr: float) -> np.ndarray:
    """Co-channel user latents: each image interferes with the next.

    Rolling the batch by one gives every primary transmission a
    distinct same-distribution interferer, deterministically.
    """
    images = np.asarray(images, dtype=float)
    if trainer.pipeline == "vae":
        raw = trainer.encoder.forward(images, cbr).mu
    else:
        raw = trainer.encoder.forward(images, cbr)
    normed, _ = normalize_rows(np.roll(raw, 1, axis=0),
                               trainer.config.power)
    return normed


def interference_sinr_db(coeffs, power: float, snr_db: float) -> float:
    """SINR of the two-user convex mix at a given thermal SNR."""
    return sinr_db(coeffs, power, snr_to_sigma2(snr_db, power))
