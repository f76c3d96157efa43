"""Mask-conditioned reverse diffusion, plain generation and latent interpolation.

At every reverse step the trusted pixels (mask 0) are overwritten by a
freshly noised copy of the degraded input at the new noise level, so the
denoiser always sees a composed image. The final composition uses the input
itself with no noise, which makes trusted pixels bit-exact in the output.

Images here are (H, W, C) numpy arrays; masks are (H, W) with 1 = regenerate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .checkpoint import Checkpoint
from .errors import CheckpointError, ValidationError
from .model import DiffusionAutoencoder, denoise, encode
from .schedule import NoiseSchedule, forward_diffuse, posterior_step, renoise, strided_timesteps

LATENT_SOURCES = ("from_artifact", "provided", "interpolated")


@dataclass
class RestoreOptions:
    steps: int | None = None  # None -> all T timesteps
    resample_count: int = 1
    latent_source: str = "from_artifact"
    lam: float = 0.5
    seed: int = 0
    literal_mean: bool = False

    def validate(self, T: int) -> None:
        steps = T if self.steps is None else self.steps
        if not 1 <= steps <= T:
            raise ValidationError(f"steps: must lie in [1, {T}], got {steps}")
        if self.resample_count < 1:
            raise ValidationError("resample_count: must be at least 1")
        if self.latent_source not in LATENT_SOURCES:
            raise ValidationError(f"latent_source: must be one of {LATENT_SOURCES}, got {self.latent_source!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lam: must lie in [0, 1], got {self.lam}")

    def to_dict(self) -> dict:
        return asdict(self)


def _to_tensor(img: np.ndarray) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def _to_image(x: torch.Tensor) -> np.ndarray:
    return x[0].detach().cpu().numpy().transpose(1, 2, 0).copy()


def compose_known(x_t, x_art, m, t: int, eps, sched: NoiseSchedule):
    """``M * x_t + (1 - M) * noised(x_art, t)``; ``t = -1`` means no noise.

    Selection is done with ``where`` rather than arithmetic so trusted pixels
    are copied bit-for-bit.
    """
    if tuple(x_t.shape) != tuple(x_art.shape) or tuple(eps.shape) != tuple(x_art.shape):
        raise ValidationError("x_t, x_art and eps must share one shape")
    known = x_art if t < 0 else forward_diffuse(x_art, t, eps, sched)
    if isinstance(x_t, torch.Tensor):
        sel = torch.as_tensor(m).bool()
        while sel.ndim < x_t.ndim:
            sel = sel.unsqueeze(0)
        return torch.where(sel, x_t, known)
    sel = np.asarray(m).astype(bool)
    if x_t.ndim == sel.ndim + 1:
        sel = sel[..., None]
    return np.where(sel, x_t, known)


def interpolate_latents(z1, z2, lam: float):
    """``(1 - lam) * z1 + lam * z2``; ``lam = 0`` and ``lam = 1`` return copies of the endpoints."""
    if tuple(z1.shape) != tuple(z2.shape):
        raise ValidationError(f"latent dimensions differ: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lam: must lie in [0, 1], got {lam}")
    if lam == 0.0:
        return z1.clone() if isinstance(z1, torch.Tensor) else np.array(z1, copy=True)
    if lam == 1.0:
        return z2.clone() if isinstance(z2, torch.Tensor) else np.array(z2, copy=True)
    return (1.0 - lam) * z1 + lam * z2


def _model_for(ckpt: Checkpoint | DiffusionAutoencoder) -> DiffusionAutoencoder:
    return ckpt if isinstance(ckpt, DiffusionAutoencoder) else ckpt.build_model()


def _check_size(model: DiffusionAutoencoder, img: np.ndarray) -> None:
    cfg = model.cfg
    if img.shape != (cfg.image_size, cfg.image_size, cfg.channels):
        raise CheckpointError(
            f"checkpoint expects {cfg.image_size}x{cfg.image_size}x{cfg.channels} images, got {img.shape}"
        )


@torch.no_grad()
def encode_image(img: np.ndarray, ckpt) -> torch.Tensor:
    model = _model_for(ckpt)
    _check_size(model, np.asarray(img))
    return encode(_to_tensor(img), model)


@torch.no_grad()
def restore(
    x_art: np.ndarray,
    m: np.ndarray,
    ckpt,
    sched: NoiseSchedule | None = None,
    opts: RestoreOptions | None = None,
    z: torch.Tensor | None = None,
    ref: np.ndarray | None = None,
) -> np.ndarray:
    """Regenerate the masked pixels of ``x_art``.

    The latent comes from ``x_art`` (``from_artifact``), from ``z``
    (``provided``) or from interpolating ``x_art``'s latent toward that of
    ``ref`` by ``opts.lam`` (``interpolated``). Pixels with ``m == 0`` are
    returned unchanged.
    """
    opts = opts or RestoreOptions()
    x_art = np.asarray(x_art, dtype=np.float32)
    m = np.asarray(m)
    model = _model_for(ckpt)
    sched = sched if sched is not None else ckpt.schedule_config.build()
    opts.validate(sched.T)
    _check_size(model, x_art)
    if m.shape != x_art.shape[:2]:
        raise ValidationError(f"mask: shape {m.shape} does not match image {x_art.shape[:2]}")
    if not m.astype(bool).any():
        raise ValidationError("mask: empty, nothing to restore")

    art = _to_tensor(x_art)
    if opts.latent_source == "from_artifact":
        z = encode(art, model)
    elif opts.latent_source == "provided":
        if z is None:
            raise ValidationError("latent_source 'provided' needs z")
        z = torch.as_tensor(z, dtype=torch.float32).reshape(1, -1)
    else:
        if ref is None:
            raise ValidationError("latent_source 'interpolated' needs a reference image")
        ref = np.asarray(ref, dtype=np.float32)
        _check_size(model, ref)
        z = interpolate_latents(encode(art, model), encode(_to_tensor(ref), model), opts.lam)

    sel = torch.from_numpy(m.astype(bool))
    gen = torch.Generator().manual_seed(int(opts.seed))
    ts = strided_timesteps(sched.T, sched.T if opts.steps is None else opts.steps)
    x = torch.randn(art.shape, generator=gen)
    x = compose_known(x, art, sel, ts[0], torch.randn(art.shape, generator=gen), sched)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else -1
        for r in range(opts.resample_count):
            x0_hat = denoise(x, t, z, model)
            noise = torch.randn(art.shape, generator=gen)
            x_prev = posterior_step(x, x0_hat, t, sched, noise, t_prev=t_prev, literal=opts.literal_mean)
            x_prev = compose_known(x_prev, art, sel, t_prev, torch.randn(art.shape, generator=gen), sched)
            if r + 1 < opts.resample_count and t_prev >= 0:
                x = renoise(x_prev, t_prev, t, sched, torch.randn(art.shape, generator=gen))
            else:
                x = x_prev
                break
    out = torch.where(sel, x.clamp(0.0, 1.0), art)
    return _to_image(out)


@torch.no_grad()
def generate(ckpt, sched: NoiseSchedule | None = None, z=None, seed: int = 0, steps: int | None = None) -> np.ndarray:
    """Sample an image from noise with a fixed latent (zeros when ``z`` is None)."""
    model = _model_for(ckpt)
    sched = sched if sched is not None else ckpt.schedule_config.build()
    cfg = model.cfg
    z = torch.zeros(1, cfg.latent_dim) if z is None else torch.as_tensor(z, dtype=torch.float32).reshape(1, -1)
    if z.shape[1] != cfg.latent_dim:
        raise CheckpointError(f"latent has {z.shape[1]} dims, checkpoint expects {cfg.latent_dim}")
    shape = (1, cfg.channels, cfg.image_size, cfg.image_size)
    gen = torch.Generator().manual_seed(int(seed))
    ts = strided_timesteps(sched.T, sched.T if steps is None else steps)
    x = torch.randn(shape, generator=gen)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else -1
        x0_hat = denoise(x, t, z, model)
        x = posterior_step(x, x0_hat, t, sched, torch.randn(shape, generator=gen), t_prev=t_prev)
    return _to_image(x.clamp(0.0, 1.0))


@torch.no_grad()
def reconstruct(x0: np.ndarray, ckpt, t: int, seed: int = 0, sched: NoiseSchedule | None = None) -> np.ndarray:
    """One-shot denoise of ``x0`` noised to level ``t``, conditioned on its own latent."""
    model = _model_for(ckpt)
    sched = sched if sched is not None else ckpt.schedule_config.build()
    x = _to_tensor(x0)
    _check_size(model, np.asarray(x0))
    eps = torch.randn(x.shape, generator=torch.Generator().manual_seed(int(seed)))
    x_t = forward_diffuse(x, t, eps, sched)
    return _to_image(denoise(x_t, t, encode(x, model), model))
