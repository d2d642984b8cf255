"""Experiment engine behind the CLI: train, sweep, visualize, oracle.

Every run writes a resolved-config echo into its output directory so
results are self-describing and reproducible from the echo alone.
CSV outputs are deterministic given (config, seed): wall-clock timing
goes to a separate ``timing.json`` sidecar instead of the CSVs, so
re-running a command yields byte-identical logs.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import MatchedDecoder, VaeEncoder
from .config import config_echo, resolve_config
from .data import Dataset, load_cifar10, load_mnist, synthetic_toy
from .denoiser import ConditionalUNet, DenoiserConfig
from .encoder import EncoderConfig, SemanticEncoder
from .errors import ConfigError, DataError
from .metrics import psnr as psnr_fn
from .metrics import denormalize, ssim as ssim_fn
from .oracle import consistency_experiment, default_toy
from .schedule import DiffusionSchedule, build_schedule
from .training import (AutoencoderTrainer, DiffusionTrainer, Trainer,
                       TrainConfig, VaeTrainer, interference_latents,
                       interference_sinr_db)

# Seed-substream labels for experiment-level randomness (training has
# its own substreams inside Trainer).
_STREAM_TRAIN_DATA = 20
_STREAM_EVAL_DATA = 21
_STREAM_ENCODER_INIT = 10
_STREAM_DENOISER_INIT = 11
_STREAM_DECODER_INIT = 12
_STREAM_SWEEP_BASE = 7000
_STREAM_ORACLE_BASE = 5000
_STREAM_VISUALIZE = 6000

SWEEP_CSV_COLUMNS = ("seed", "dataset", "pipeline", "regime", "cbr",
                     "snr_db", "sinr_db", "psnr_mean", "psnr_std",
                     "ssim_mean", "ssim_std", "samples")
TRAIN_CSV_COLUMNS = ("step", "epoch", "loss", "snr_db", "cbr")
ORACLE_CSV_COLUMNS = ("n", "seed", "mse")


@dataclass(frozen=True)
class ExperimentRecord:
    """One sweep cell.  ``wall_ms`` is measured but lands in the
    timing sidecar, not the CSV, to keep logs byte-reproducible."""

    seed: int
    dataset: str
    pipeline: str
    regime: str
    cbr: float
    snr_db: float
    sinr_db: float | None
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    samples: int
    wall_ms: float = 0.0

    def csv_row(self) -> dict:
        row = {c: getattr(self, c) for c in SWEEP_CSV_COLUMNS}
        if row["sinr_db"] is None:
            row["sinr_db"] = ""
        return row


def write_csv(path, rows, columns) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        # lineterminator: csv defaults to \r\n even on unix.
        writer = csv.DictWriter(fh, fieldnames=list(columns),
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in columns})


def schedule_from_config(cfg: dict) -> DiffusionSchedule:
    s = cfg["schedule"]
    return build_schedule(T=int(s["T"]), beta_start=float(s["beta_start"]),
                          beta_end=float(s["beta_end"]),
                          w_schedule=s["w_schedule"])


def encoder_config_from(cfg: dict) -> EncoderConfig:
    dataset = cfg["data"]["dataset"]
    enc = cfg["encoder"]
    arch = enc["arch"]
    if arch == "auto":
        arch = "cifar10" if dataset == "cifar10" else "mnist"
    if arch not in ("mnist", "cifar10"):
        raise ConfigError(f"unknown encoder arch {arch!r}")
    tcfg = cfg["trainer"]
    cbrs = tuple(tcfg["cbr_list"]) if tcfg["regime"] == "adaptive" \
        else (float(tcfg["cbr"]),)
    base = EncoderConfig.mnist(cbrs) if arch == "mnist" \
        else EncoderConfig.cifar10(cbrs)
    overrides = {}
    if enc["conv_channels"] is not None:
        overrides["conv_channels"] = tuple(enc["conv_channels"])
    if enc["conv_strides"] is not None:
        overrides["conv_strides"] = tuple(enc["conv_strides"])
    if enc["batch_norm"] is not None:
        overrides["batch_norm"] = bool(enc["batch_norm"])
    if overrides:
        base = EncoderConfig(
            input_channels=base.input_channels,
            image_size=base.image_size,
            conv_channels=overrides.get("conv_channels", base.conv_channels),
            conv_strides=overrides.get("conv_strides", base.conv_strides),
            batch_norm=overrides.get("batch_norm", base.batch_norm),
            cbr_list=base.cbr_list)
    return base


def train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["trainer"]
    return TrainConfig(
        pipeline=cfg["pipeline"], regime=t["regime"], cbr=float(t["cbr"]),
        cbr_list=tuple(t["cbr_list"]), epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]), lr=float(t["lr"]),
        train_snr_db=tuple(float(v) for v in t["train_snr_db"]),
        ema_decay=float(t["ema_decay"]), seed=int(t["seed"]),
        power=float(cfg["channel"]["power"]))


def build_trainer(cfg: dict) -> Trainer:
    schedule = schedule_from_config(cfg)
    tconf = train_config_from(cfg)
    econf = encoder_config_from(cfg)
    seed = tconf.seed
    enc_rng = np.random.default_rng([seed, _STREAM_ENCODER_INIT])
    if cfg["pipeline"] == "cdiff":
        d = cfg["denoiser"]
        dconf = DenoiserConfig(
            base_dim=int(d["base_dim"]),
            dim_mults=tuple(d["dim_mults"]),
            image_channels=econf.input_channels,
            time_dim=None if d["time_dim"] is None else int(d["time_dim"]),
            use_attention=bool(d["use_attention"]))
        denoiser = ConditionalUNet(
            dconf, np.random.default_rng([seed, _STREAM_DENOISER_INIT]))
        return DiffusionTrainer(tconf, schedule,
                                SemanticEncoder(econf, enc_rng), denoiser,
                                noise_mode=cfg["channel"]["noise_mode"])
    dec_rng = np.random.default_rng([seed, _STREAM_DECODER_INIT])
    decoder = MatchedDecoder(econf, dec_rng)
    if cfg["pipeline"] == "ae":
        return AutoencoderTrainer(tconf, schedule,
                                  SemanticEncoder(econf, enc_rng), decoder)
    if cfg["pipeline"] == "vae":
        return VaeTrainer(tconf, schedule, VaeEncoder(econf, enc_rng),
                          decoder)
    raise ConfigError(f"unknown pipeline {cfg['pipeline']!r}")


def load_dataset(cfg: dict, split: str) -> Dataset:
    data = cfg["data"]
    name = data["dataset"]
    seed = int(cfg["trainer"]["seed"])
    if name == "synthetic":
        stream = _STREAM_TRAIN_DATA if split == "train" else _STREAM_EVAL_DATA
        n = data["train_samples"] if split == "train" \
            else data["eval_samples"]
        n = int(n or 2000)
        return synthetic_toy(n, np.random.default_rng([seed, stream]),
                             split=split)
    if name == "mnist":
        ds = load_mnist(split, root=data["root"],
                        strict_counts=data["train_samples"] is None)
    elif name == "cifar10":
        ds = load_cifar10(split, root=data["root"],
                          strict_counts=data["train_samples"] is None)
    else:
        raise ConfigError(f"unknown dataset {name!r}")
    cap = data["train_samples"] if split == "train" else data["eval_samples"]
    if cap is not None and int(cap) < len(ds):
        ds = ds.subset(int(cap))
    return ds


# -- checkpoints ------------------------------------------------------

def save_checkpoint(path, trainer: Trainer, cfg: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for mod_name, module in sorted(trainer.modules.items()):
        for key, arr in module.state_dict().items():
            arrays[f"state:{mod_name}.{key}"] = arr
    for key, arr in trainer.ema.shadow.items():
        arrays[f"ema:{key}"] = arr
    meta = {"config": cfg, "pipeline": trainer.pipeline,
            "format_version": 1}
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Rebuild a trainer (architecture from the config echo) and load
    its weights and EMA shadows.  Returns (trainer, config)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} does not exist")
    with np.load(path) as blob:
        if "meta_json" not in blob:
            raise DataError(f"{path} is not a checkpoint written by this "
                            "package (no embedded config)")
        meta = json.loads(bytes(blob["meta_json"]).decode())
        cfg = resolve_config(meta["config"])
        trainer = build_trainer(cfg)
        if trainer.pipeline != meta["pipeline"]:
            raise DataError("checkpoint pipeline mismatch")
        states = {mod: {} for mod in trainer.modules}
        for key in blob.files:
            if key.startswith("state:"):
                mod, sub = key[len("state:"):].split(".", 1)
                if mod not in states:
                    raise DataError(f"checkpoint holds unknown module "
                                    f"{mod!r}")
                states[mod][sub] = blob[key]
            elif key.startswith("ema:"):
                name = key[len("ema:"):]
                if name not in trainer.ema.shadow:
                    raise DataError(f"checkpoint EMA entry {name!r} has "
                                    "no live counterpart")
                if blob[key].shape != trainer.ema.shadow[name].shape:
                    raise DataError(f"checkpoint EMA entry {name!r} shape "
                                    "mismatch")
                trainer.ema.shadow[name][...] = blob[key]
        for mod, state in states.items():
            trainer.modules[mod].load_state_dict(state)
    return trainer, cfg


# -- commands ---------------------------------------------------------

def run_train(cfg: dict):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_echo(cfg))
    trainer = build_trainer(cfg)
    dataset = load_dataset(cfg, "train")
    start = time.perf_counter()
    rows = trainer.fit(dataset)
    wall_ms = (time.perf_counter() - start) * 1000.0
    write_csv(out / "train_log.csv", rows, TRAIN_CSV_COLUMNS)
    save_checkpoint(out / "checkpoint.npz", trainer, cfg)
    (out / "timing.json").write_text(json.dumps(
        {"total_ms": wall_ms, "epoch_ms": trainer.timing_ms}, indent=2)
        + "\n")
    return {"out_dir": out, "checkpoint": out / "checkpoint.npz",
            "log": out / "train_log.csv", "trainer": trainer}


def _sweep_cells(cfg: dict, trained_cbrs):
    sweep = cfg["sweep"]
    snrs = list(sweep["snr_db"])
    cbrs = list(sweep["cbr"]) if sweep["cbr"] is not None \
        else list(trained_cbrs)
    intf = sweep["interference"]
    for pair in intf or ():
        if len(pair) != 2:
            raise ConfigError("interference cells are two-user coefficient "
                              f"pairs, got {pair!r}")
    intf_cells = [None] if not intf else [None] + [tuple(c) for c in intf]
    seeds = list(sweep["seeds"])
    if not snrs or not cbrs or not seeds:
        raise ConfigError("sweep grid is empty (snr_db, cbr and seeds "
                          "must all be nonempty)")
    cells = []
    for seed in seeds:
        for cbr in cbrs:
            for snr in snrs:
                for coeffs in intf_cells:
                    cells.append((int(seed), float(cbr), float(snr), coeffs))
    return cells


def _cell_cbr_args(trainer: Trainer, cbr: float):
    """Map a sweep bandwidth onto (trained head, eval cbr) arguments."""
    trained = trainer.config.active_cbrs()
    if cbr in trained:
        return cbr, None
    smaller = [c for c in trained if c > cbr]
    if smaller:
        return min(smaller), cbr
    raise ConfigError(f"sweep cbr {cbr} exceeds every trained bandwidth "
                      f"{sorted(trained)}; masking only reduces rate")


def _eval_cell(trainer: Trainer, images: np.ndarray, source: str,
               idx: int, cell) -> ExperimentRecord:
    seed, cbr, snr, coeffs = cell
    rng = np.random.default_rng([seed, _STREAM_SWEEP_BASE + idx])
    head_cbr, eval_cbr = _cell_cbr_args(trainer, cbr)
    interference = None
    sinr = None
    if coeffs is not None:
        others = [interference_latents(trainer, images, head_cbr)]
        interference = (coeffs, others)
        sinr = interference_sinr_db(coeffs, trainer.config.power, snr)
    start = time.perf_counter()
    x_hat = trainer.reconstruct(images, head_cbr, snr, rng,
                                cbr_eval=eval_cbr,
                                interference=interference)
    wall = (time.perf_counter() - start) * 1000.0
    a = denormalize(images)
    b = denormalize(x_hat)
    ps = np.array([psnr_fn(x, y) for x, y in zip(a, b)])
    ss = np.array([ssim_fn(x, y) for x, y in zip(a, b)])
    return ExperimentRecord(
        seed=seed, dataset=source, pipeline=trainer.pipeline,
        regime=trainer.config.regime, cbr=cbr, snr_db=snr,
        sinr_db=sinr, psnr_mean=float(ps.mean()),
        psnr_std=float(ps.std()), ssim_mean=float(ss.mean()),
        ssim_std=float(ss.std()), samples=len(images), wall_ms=wall)


# Worker state for parallel sweeps.  Set in the parent before forking;
# children inherit it read-only (each fork gets private copy-on-write
# memory, so in-place EMA weight swaps cannot race across cells).
_POOL_STATE: tuple | None = None


def _eval_cell_forked(idx: int) -> ExperimentRecord:
    trainer, images, source, cells = _POOL_STATE
    return _eval_cell(trainer, images, source, idx, cells[idx])


def run_sweep(cfg: dict, checkpoint_path, out_path=None):
    """Grid evaluation of a trained checkpoint.

    The checkpoint's embedded config decides the model and dataset;
    the sweep section of ``cfg`` only supplies the grid.  Cell RNG is
    derived from (cell seed, row index), so results do not depend on
    worker scheduling and the CSV is reproducible at any worker count.
    """
    trainer, train_cfg = load_checkpoint(checkpoint_path)
    cells = _sweep_cells(cfg, trainer.config.active_cbrs())
    dataset = load_dataset(train_cfg, "test")
    samples = int(cfg["sweep"]["samples"])
    images = dataset.images[:samples]
    workers = int(cfg["sweep"]["workers"])
    if workers < 1:
        raise ConfigError(f"sweep.workers must be >= 1, got {workers}")
    if workers > 1:
        import concurrent.futures
        import multiprocessing

        global _POOL_STATE
        _POOL_STATE = (trainer, images, dataset.source, cells)
        try:
            ctx = multiprocessing.get_context("fork")
            with concurrent.futures.ProcessPoolExecutor(
                    max_workers=workers, mp_context=ctx) as pool:
                records = list(pool.map(_eval_cell_forked,
                                        range(len(cells))))
        finally:
            _POOL_STATE = None
    else:
        records = [_eval_cell(trainer, images, dataset.source, idx, cell)
                   for idx, cell in enumerate(cells)]
    if out_path is not None:
        out_path = Path(out_path)
        write_csv(out_path, [r.csv_row() for r in records],
                  SWEEP_CSV_COLUMNS)
        out_path.with_name(out_path.stem + "_timing.json").write_text(
            json.dumps({"wall_ms": [r.wall_ms for r in records]}, indent=2)
            + "\n")
        out_path.with_name(out_path.stem + "_config.json").write_text(
            config_echo(cfg))
    return records


def run_visualize(checkpoint_path, count: int, out_dir, snr_db: float = 10.0):
    from PIL import Image

    trainer, cfg = load_checkpoint(checkpoint_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(cfg, "test")
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    images = dataset.images[:count]
    seed = trainer.config.seed
    rng = np.random.default_rng([seed, _STREAM_VISUALIZE])
    cbr = trainer.config.active_cbrs()[0]
    x_hat = trainer.reconstruct(images, cbr, snr_db, rng)

    def to_png(arr, path):
        img = np.round(denormalize(arr) * 255.0).astype(np.uint8)
        img = img[0] if img.shape[0] == 1 else img.transpose(1, 2, 0)
        Image.fromarray(img).save(path)

    rows = []
    for i, (orig, recon) in enumerate(zip(images, x_hat)):
        p = psnr_fn(denormalize(orig), denormalize(recon))
        s = ssim_fn(denormalize(orig), denormalize(recon))
        orig_file = f"sample{i:03d}_orig.png"
        recon_file = f"sample{i:03d}_recon_psnr{p:.2f}_ssim{s:.3f}.png"
        to_png(orig, out / orig_file)
        to_png(recon, out / recon_file)
        rows.append({"index": i, "psnr_db": p, "ssim": s,
                     "original": orig_file, "reconstruction": recon_file})
    write_csv(out / "captions.csv", rows,
              ("index", "psnr_db", "ssim", "original", "reconstruction"))
    return rows


def run_oracle(out_dir=None, seeds: int = 10,
               n_list=(100, 1000, 10000, 100000)):
    """Consistency harness: per-seed least-squares fits vs the analytic
    conditional mean; rows (n, seed, mse)."""
    toy = default_toy()
    rows = []
    for seed in range(seeds):
        rng = np.random.default_rng([seed, _STREAM_ORACLE_BASE])
        for rec in consistency_experiment(toy, n_list, rng):
            rows.append({"n": rec.n, "seed": seed, "mse": rec.mse})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "oracle.csv", rows, ORACLE_CSV_COLUMNS)
    return rows
