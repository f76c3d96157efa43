"""Joint encoder + denoiser training with hand-written Adam and linear LR decay.

Randomness is keyed by ``(seed, epoch)`` for batch order and by
``(seed, step)`` for timestep/noise draws, so a run resumed from any epoch
checkpoint continues with exactly the draws of an uninterrupted run.
Bitwise reproducibility is only promised single-threaded.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint
from .errors import NumericAbort, ValidationError
from .imageio import atomic_write_text
from .model import DiffusionAutoencoder, ModelConfig, init_params, loss_and_grad
from .rng import derive_seed
from .schedule import ScheduleConfig

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "epoch", "lr", "loss")


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 4
    lr_init: float = 1e-4
    lr_schedule: str = "linear_decay"
    seed: int = 0
    dataset: str = ""
    checkpoint_every: int = 0  # epochs; 0 disables intermediate checkpoints
    grad_clip: float = 1.0
    hflip: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs: must be at least 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size: must be at least 1")
        if not self.lr_init > 0:
            raise ValidationError("lr_init: must be positive")
        if self.lr_schedule != "linear_decay":
            raise ValidationError(f"lr_schedule: only 'linear_decay' is supported, got {self.lr_schedule!r}")
        if self.checkpoint_every < 0:
            raise ValidationError("checkpoint_every: must be non-negative")
        self.model.validate()

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("model", "schedule")}
        d["model"] = self.model.to_dict()
        d["schedule"] = vars(self.schedule).copy()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        schedule = ScheduleConfig(**d.pop("schedule", {}))
        return cls(model=model, schedule=schedule, **d)


@dataclass
class OptimizerState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict[str, torch.Tensor]) -> "OptimizerState":
        return cls(
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear decay from ``lr_init`` at epoch 0 to zero at epoch ``epochs``."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValidationError(f"epoch: {epoch} outside [0, {cfg.epochs}]")
    return cfg.lr_init * (1.0 - epoch / cfg.epochs)


def adam_update(
    params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: OptimizerState, lr: float
) -> tuple[dict[str, torch.Tensor], OptimizerState]:
    """Bias-corrected Adam step; returns new tensors and a new state."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ValidationError("grads: parameter names do not match")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValidationError(f"{k}: gradient shape {tuple(g.shape)} does not match {tuple(p.shape)}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - lr * (m / c1) / (torch.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, OptimizerState(new_m, new_v, step, b1, b2, state.eps)


def clip_global_norm(grads: dict[str, torch.Tensor], max_norm: float) -> dict[str, torch.Tensor]:
    if max_norm <= 0:
        return grads
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / (total + 1e-12)
    return {k: g * scale for k, g in grads.items()}


def format_loss_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_COLUMNS)
    for r in rows:
        w.writerow([r["step"], r["epoch"], repr(r["lr"]), repr(r["loss"])])
    return buf.getvalue()


def read_loss_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"step": int(r["step"]), "epoch": int(r["epoch"]), "lr": float(r["lr"]), "loss": float(r["loss"])}
            for r in csv.DictReader(fh)
        ]


def _params(model: DiffusionAutoencoder) -> dict[str, torch.Tensor]:
    return {k: p.detach() for k, p in model.named_parameters()}


def _snapshot(model, cfg: TrainConfig, opt: OptimizerState, epoch: int) -> Checkpoint:
    return Checkpoint.from_model(
        model,
        cfg.schedule,
        adam_m={k: t.clone() for k, t in opt.m.items()},
        adam_v={k: t.clone() for k, t in opt.v.items()},
        state={"epoch": epoch, "step": opt.step, "train_config": cfg.to_dict()},
    )


def train(
    cfg: TrainConfig,
    images: np.ndarray | None = None,
    out_dir=None,
    resume: Checkpoint | None = None,
    encoder_trainable: bool = True,
) -> TrainResult:
    """Fit the diffusion autoencoder on clean images only.

    ``images`` is an (N, H, W, C) array in [0, 1]; when omitted the clean
    dataset at ``cfg.dataset`` is loaded. There is deliberately no way to
    hand masks or artifact images to this function. Checkpoints
    (``ckpt_epoch_<k>.bin``, ``ckpt_final.bin``) and ``loss.csv`` are
    written to ``out_dir`` when given.
    """
    cfg.validate()
    if images is None:
        from .dataset import load_clean_images

        _, images = load_clean_images(cfg.dataset, cfg.model.image_size, cfg.model.channels)
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValidationError("images: need a non-empty (N, H, W, C) stack of clean images")
    if images.shape[1:] != (cfg.model.image_size, cfg.model.image_size, cfg.model.channels):
        raise ValidationError(f"images: shape {images.shape[1:]} does not match the model config")
    data = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
    sched = cfg.schedule.build()
    out = Path(out_dir) if out_dir is not None else None

    model = init_params(cfg.model)
    opt = OptimizerState.fresh(_params(model))
    start_epoch = 0
    if resume is not None:
        model = resume.build_model()
        model.train()
        opt = OptimizerState(dict(resume.adam_m), dict(resume.adam_v), int(resume.state.get("step", 0)))
        start_epoch = int(resume.state.get("epoch", 0))
    # a frozen encoder gets zero gradients, which leaves Adam's update at exactly zero
    for p in model.encoder.parameters():
        p.requires_grad_(encoder_trainable)

    n = data.shape[0]
    rows: list[dict] = []
    if out is not None and resume is not None and (out / "loss.csv").exists():
        rows = [r for r in read_loss_log(out / "loss.csv") if r["step"] < opt.step]
    new_rows: list[dict] = []

    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = torch.randperm(n, generator=torch.Generator().manual_seed(derive_seed(cfg.seed, "epoch", epoch)))
        for start in range(0, n, cfg.batch_size):
            gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "step", opt.step))
            batch = data[order[start : start + cfg.batch_size]]
            if cfg.hflip:
                flip = torch.rand(batch.shape[0], generator=gen) < 0.5
                batch = torch.where(flip[:, None, None, None], batch.flip(-1), batch)
            loss, grads = loss_and_grad(batch, model, sched, gen)
            if not math.isfinite(loss):
                # the update has not been applied yet, so the live model is the last good state
                if out is not None:
                    _snapshot(model, cfg, opt, epoch).save(out / "ckpt_last_good.bin")
                raise NumericAbort(f"non-finite loss at step {opt.step} (epoch {epoch}); last good state kept")
            grads = clip_global_norm(grads, cfg.grad_clip)
            new_params, opt = adam_update(_params(model), grads, opt, lr)
            with torch.no_grad():
                for k, p in model.named_parameters():
                    p.copy_(new_params[k])
            new_rows.append({"step": opt.step - 1, "epoch": epoch, "lr": lr, "loss": loss})
        log.debug("epoch %d lr %.3g loss %.5f", epoch, lr, new_rows[-1]["loss"])
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            snap = _snapshot(model, cfg, opt, epoch + 1)
            snap.save(out / f"ckpt_epoch_{epoch + 1}.bin")
            atomic_write_text(out / "loss.csv", format_loss_log(rows + new_rows))

    final = _snapshot(model, cfg, opt, cfg.epochs)
    if out is not None:
        final.save(out / "ckpt_final.bin")
        atomic_write_text(out / "loss.csv", format_loss_log(rows + new_rows))
    return TrainResult(final, new_rows)
