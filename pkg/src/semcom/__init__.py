"""Diffusion-decoded semantic communication over noisy channels.

A semantic encoder compresses images into power-normalized channel
symbols, an AWGN stage corrupts them, and a conditional diffusion
model reconstructs the image from the received latent.  Analytic
linear-Gaussian oracles validate the sampler algebra and the
consistency of MSE-trained conditional denoisers.
"""

from .channel import (ChannelConfig, SemanticLatent, awgn, awgn_rows,
                      mix_interference, normalize_power, sinr_db,
                      snr_to_sigma2, stochastic_mask)
from .config import DEFAULT_CONFIG, PRESETS, load_config, resolve_config
from .data import (Dataset, load_cifar10, load_mnist, parse_cifar_bin,
                   parse_idx, serialize_idx, synthetic_toy)
from .diffusion import (ConditionTensor, forward_diffuse, predict_eps,
                        reverse_step, sample)
from .encoder import EncoderConfig, SemanticEncoder
from .denoiser import ConditionalUNet, DenoiserConfig
from .baselines import MatchedDecoder, VaeEncoder, vae_loss
from .errors import (BadMagicError, ConfigError, DataError,
                     DegenerateInputError, DimensionOverflowError,
                     NumericalError, SemcomError, TruncatedPayloadError)
from .metrics import MetricReport, batch_metrics, psnr, ssim
from .oracle import (LinearGaussianToy, analytic_posterior_mean,
                     consistency_experiment, default_toy, posterior_cov,
                     vanilla_ddpm_reference_step)
from .schedule import DiffusionSchedule, build_schedule, sampler_coefficients
from .training import (AutoencoderTrainer, DiffusionTrainer, TrainConfig,
                       VaeTrainer)

__version__ = "0.1.0"

__all__ = [
    "AutoencoderTrainer", "BadMagicError", "ChannelConfig",
    "ConditionTensor", "ConditionalUNet", "ConfigError", "DEFAULT_CONFIG",
    "DataError", "Dataset", "DegenerateInputError", "DenoiserConfig",
    "DimensionOverflowError", "TruncatedPayloadError",
    "DiffusionSchedule", "DiffusionTrainer", "EncoderConfig",
    "LinearGaussianToy", "MatchedDecoder", "MetricReport",
    "NumericalError", "PRESETS", "SemanticEncoder", "SemanticLatent",
    "SemcomError", "TrainConfig", "VaeEncoder", "VaeTrainer",
    "analytic_posterior_mean", "awgn", "awgn_rows", "batch_metrics",
    "build_schedule", "consistency_experiment", "default_toy",
    "forward_diffuse", "load_cifar10", "load_config", "load_mnist",
    "mix_interference", "normalize_power", "parse_cifar_bin", "parse_idx",
    "posterior_cov", "predict_eps", "psnr", "resolve_config",
    "reverse_step", "sample", "sampler_coefficients", "serialize_idx",
    "sinr_db", "snr_to_sigma2", "ssim", "stochastic_mask", "synthetic_toy",
    "vae_loss", "vanilla_ddpm_reference_step",
]
