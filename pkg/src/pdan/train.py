"""L1 training with Adam and benchmark evaluation."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import ops
from .arch import ModelGraph, forward
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .dataset import PairDataset, sample_batch
from .imaging import DegradationSpec, bicubic_resize, quantize
from .metrics import psnr_y, ssim_y
from .tensor import NonFiniteError, Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    patch_size: int = 48
    lr0: float = 1e-4
    halving_epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1000
    steps_per_epoch: int = 1000
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "patch_size", "halving_epochs", "epochs", "steps_per_epoch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr0 < 0 or self.eps <= 0:
            raise ValueError("lr0 must be non-negative and eps positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.lr0 * 0.5 ** (epoch // cfg.halving_epochs)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam, in place.  A parameter without a gradient is treated
    as having a zero gradient."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    t = state.t
    c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


@dataclass
class TrainResult:
    history: list[tuple[int, int, float, float]]  # (step, epoch, lr, loss)
    step: int
    state: AdamState

    @property
    def losses(self) -> list[float]:
        return [h[3] for h in self.history]


CHECKPOINT_NAME = "checkpoint.pdan"


def _save_state(model: ModelGraph, path: Path, adam: AdamState, step: int,
                rng: np.random.Generator, cfg: TrainConfig) -> None:
    extra = {f"adam.m.{k}": v for k, v in adam.m.items()}
    extra.update({f"adam.v.{k}": v for k, v in adam.v.items()})
    meta = {"step": step, "adam_t": adam.t, "rng": rng.bit_generator.state,
            "train": asdict(cfg)}
    save_checkpoint(model, path, extra=extra, meta=meta)


def resume_state(model: ModelGraph, path: str | Path) -> tuple[AdamState, int, dict]:
    """Load parameters and optimiser state; returns (adam, step, rng_state)."""
    ckpt = read_checkpoint(path)
    if ckpt.config.canonical_json() != model.config.canonical_json():
        raise ValueError(f"{path}: checkpoint config differs from the model being trained")
    load_into(model, ckpt)
    adam = AdamState(t=int(ckpt.meta.get("adam_t", 0)))
    for name in model.params:
        if f"adam.m.{name}" in ckpt.tensors:
            adam.m[name] = ckpt.tensors[f"adam.m.{name}"].copy()
            adam.v[name] = ckpt.tensors[f"adam.v.{name}"].copy()
    return adam, int(ckpt.meta.get("step", 0)), ckpt.meta.get("rng")


def train(model: ModelGraph, dataset: PairDataset, cfg: TrainConfig,
          run_dir: str | Path | None = None, max_steps: int | None = None,
          resume: str | Path | None = None) -> TrainResult:
    """Minimise the mean absolute error between network output and HR patches.

    Runs ``cfg.epochs * cfg.steps_per_epoch`` steps (or ``max_steps`` in total,
    counting steps done before a resume).  With ``run_dir`` set, every step
    is appended to ``train_log.csv`` and a resumable checkpoint is written at
    the end of each epoch and at the final step.
    """
    if dataset.scale != model.config.scale:
        raise ValueError(f"dataset scale x{dataset.scale} != model scale x{model.config.scale}")
    rng = np.random.default_rng(cfg.seed)
    adam, step = AdamState(), 0
    if resume is not None:
        adam, step, rng_state = resume_state(model, resume)
        if rng_state is not None:
            rng.bit_generator.state = rng_state
    total = cfg.epochs * cfg.steps_per_epoch if max_steps is None else max_steps
    run_dir = Path(run_dir) if run_dir is not None else None
    log_fh = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / "train_log.csv"
        fresh = not log_path.exists() or resume is None
        log_fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_fh, lineterminator="\n")
        if fresh:
            writer.writerow(["step", "epoch", "lr", "loss"])
    model.train()
    history = []
    try:
        while step < total:
            epoch = step // cfg.steps_per_epoch
            lr = lr_at(epoch, cfg)
            batch = sample_batch(dataset, rng, cfg.batch_size, cfg.patch_size,
                                 augment_patches=cfg.augment, dtype=model_dtype(model))
            model.zero_grad()
            loss = ops.l1_loss(forward(model, Tensor(batch.lr)), Tensor(batch.hr))
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteError(f"loss diverged at step {step}")
            loss.backward()
            adam_step(model.params, adam, lr, cfg.beta1, cfg.beta2, cfg.eps)
            step += 1
            history.append((step, epoch, lr, value))
            if log_fh is not None:
                writer.writerow([step, epoch, repr(lr), repr(value)])
                if step % cfg.steps_per_epoch == 0 or step == total:
                    log_fh.flush()
                    _save_state(model, run_dir / CHECKPOINT_NAME, adam, step, rng, cfg)
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(history, step, adam)


def model_dtype(model: ModelGraph):
    return next(iter(model.params.values())).data.dtype


# ----------------------------------------------------------------------------
# evaluation

@dataclass
class EvalRow:
    image: str
    psnr: float
    ssim: float
    bicubic_psnr: float
    bicubic_ssim: float


@dataclass
class EvalResult:
    rows: list[EvalRow]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    @property
    def mean_bicubic_psnr(self) -> float:
        return float(np.mean([r.bicubic_psnr for r in self.rows]))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", "psnr_db", "ssim"])
            for r in self.rows:
                w.writerow([r.image, f"{r.psnr:.6f}", f"{r.ssim:.6f}"])
            w.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])


def super_resolve(model: ModelGraph, lr: np.ndarray) -> np.ndarray:
    """Whole-image inference in eval mode; returns (3, s*h, s*w) clamped to [0, 1]."""
    model.eval()
    with no_grad():
        out = forward(model, Tensor(np.asarray(lr, dtype=model_dtype(model))[None]))
    return np.clip(out.data[0].astype(np.float64), 0.0, 1.0)


def evaluate(upscaler, benchmark: str | Path | PairDataset, spec: DegradationSpec,
             shave: int | None = None) -> EvalResult:
    """Per-image Y-channel PSNR/SSIM plus a bicubic baseline.

    ``upscaler`` is a :class:`ModelGraph`, ``"bicubic"`` or ``"oracle"`` (the
    HR image itself).  SR outputs are rounded to 8 bits before scoring.
    """
    data = benchmark if isinstance(benchmark, PairDataset) else PairDataset.from_path(benchmark, spec)
    if isinstance(upscaler, ModelGraph) and upscaler.config.scale != spec.scale:
        raise ValueError(f"checkpoint scale x{upscaler.config.scale} != evaluation scale x{spec.scale}")
    shave = spec.scale if shave is None else shave
    rows = []
    for name, lr, hr in zip(data.names, data.lr, data.hr):
        bic = quantize(bicubic_resize(lr, spec.scale))
        if isinstance(upscaler, ModelGraph):
            sr = quantize(super_resolve(upscaler, lr))
        elif upscaler == "bicubic":
            sr = bic
        elif upscaler == "oracle":
            sr = hr
        else:
            raise ValueError(f"unknown upscaler {upscaler!r}")
        if sr.shape != hr.shape:
            raise ValueError(f"{name}: SR {sr.shape} vs HR {hr.shape}")
        rows.append(EvalRow(name, psnr_y(sr, hr, shave), ssim_y(sr, hr, shave),
                            psnr_y(bic, hr, shave), ssim_y(bic, hr, shave)))
    return EvalResult(rows)


def dump_config(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
