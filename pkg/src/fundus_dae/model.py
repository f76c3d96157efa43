"""Context encoder and latent-conditioned x0-predicting U-Net.

Both halves live in one ``DiffusionAutoencoder`` module so that a single
optimizer step trains them jointly. Tensors are NCHW throughout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ValidationError
from .schedule import NoiseSchedule, forward_diffuse


@dataclass
class ModelConfig:
    image_size: int = 64
    channels: int = 3
    latent_dim: int = 64
    base_width: int = 16
    depth: int = 2  # number of 2x downsamplings in the U-Net (depth + 1 resolution levels)
    timestep_embed_dim: int = 64
    encoder_widths: tuple[int, ...] = (16, 32, 64, 128)
    groups: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)

    def validate(self) -> None:
        for name in ("image_size", "channels", "latent_dim", "base_width", "timestep_embed_dim", "groups"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name}: must be positive")
        if self.depth < 0:
            raise ValidationError("depth: must be non-negative")
        if self.image_size % (2**self.depth) != 0:
            raise ValidationError(f"depth: image_size {self.image_size} is not divisible by 2**{self.depth}")
        if self.timestep_embed_dim % 2:
            raise ValidationError("timestep_embed_dim: must be even")
        if not self.encoder_widths:
            raise ValidationError("encoder_widths: need at least one stage")
        # group norm over a 1x1 map with one channel per group is constant, which cuts the image off from z
        if -(-self.image_size // 2 ** len(self.encoder_widths)) < 2:
            raise ValidationError(
                f"encoder_widths: {len(self.encoder_widths)} stride-2 stages reduce a {self.image_size} px image below 2x2"
            )
        widths = [self.base_width * 2**i for i in range(self.depth + 1)] + list(self.encoder_widths)
        bad = [w for w in widths if w % self.groups]
        if bad:
            raise ValidationError(f"groups: {self.groups} does not divide channel widths {bad}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def timestep_embedding(t: Tensor, dim: int) -> Tensor:
    """Sinusoidal embedding of integer timesteps, ``[sin | cos]`` halves."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int, latent_dim: int, groups: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.t_proj = nn.Linear(emb_dim, c_out)
        self.z_proj = nn.Linear(latent_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: Tensor, emb: Tensor, z: Tensor) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + (self.t_proj(emb) + self.z_proj(z))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Encoder(nn.Module):
    """Stride-2 conv stack, global average pool, affine map to the latent."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        layers: list[nn.Module] = []
        c = cfg.channels
        for w in cfg.encoder_widths:
            layers += [nn.Conv2d(c, w, 3, stride=2, padding=1), nn.GroupNorm(cfg.groups, w), nn.SiLU()]
            c = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c, cfg.latent_dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x).mean(dim=(2, 3)))


class Denoiser(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.embed_dim = cfg.timestep_embed_dim
        emb = 4 * cfg.base_width
        widths = [cfg.base_width * 2**i for i in range(cfg.depth + 1)]
        g, d = cfg.groups, cfg.latent_dim
        self.time_mlp = nn.Sequential(nn.Linear(cfg.timestep_embed_dim, emb), nn.SiLU(), nn.Linear(emb, emb))
        self.in_conv = nn.Conv2d(cfg.channels, widths[0], 3, padding=1)
        self.down_blocks = nn.ModuleList(ResBlock(w, w, emb, d, g) for w in widths)
        self.downsamples = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(cfg.depth)
        )
        self.mid = ResBlock(widths[-1], widths[-1], emb, d, g)
        self.up_blocks = nn.ModuleList(ResBlock(2 * w, w, emb, d, g) for w in widths)
        self.upsamples = nn.ModuleList(nn.Conv2d(widths[i + 1], widths[i], 3, padding=1) for i in range(cfg.depth))
        self.out_norm = nn.GroupNorm(g, widths[0])
        self.out_conv = nn.Conv2d(widths[0], cfg.channels, 3, padding=1)

    def forward(self, x: Tensor, t: Tensor, z: Tensor) -> Tensor:
        emb = self.time_mlp(timestep_embedding(t, self.embed_dim).to(x.dtype))
        h = self.in_conv(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, emb, z)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        h = self.mid(h, emb, z)
        for i in reversed(range(len(self.up_blocks))):
            h = self.up_blocks[i](torch.cat([h, skips[i]], dim=1), emb, z)
            if i > 0:
                h = self.upsamples[i - 1](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out_conv(F.silu(self.out_norm(h)))


class DiffusionAutoencoder(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.denoiser = Denoiser(cfg)

    def shape_table(self) -> dict[str, list[int]]:
        return {name: list(p.shape) for name, p in self.state_dict().items()}


def init_params(cfg: ModelConfig) -> DiffusionAutoencoder:
    """Build a model with fan-in-scaled uniform weights and zero biases.

    Parameters are filled in ``state_dict`` order from one seeded generator,
    so the same config always yields bit-identical weights.
    """
    model = DiffusionAutoencoder(cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.GroupNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
            elif isinstance(module, (nn.Conv2d, nn.Linear)):
                w = module.weight
                bound = 1.0 / math.sqrt(w[0].numel())
                w.copy_(torch.rand(w.shape, generator=gen, dtype=torch.float64).mul_(2 * bound).sub_(bound).to(w.dtype))
                if module.bias is not None:
                    module.bias.zero_()
    return model


def _check_images(x: Tensor, cfg: ModelConfig, what: str = "image") -> None:
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ValidationError(f"{what}: expected shape (N, {', '.join(map(str, expected))}), got {tuple(x.shape)}")


def encode(x0: Tensor, model: DiffusionAutoencoder) -> Tensor:
    """Latent codes ``(N, D)`` for a batch of images ``(N, C, H, W)``."""
    _check_images(x0, model.cfg)
    return model.encoder(x0)


def denoise(x_t: Tensor, t, z: Tensor, model: DiffusionAutoencoder) -> Tensor:
    """Predict the clean image from ``x_t``; ``t`` is an int or a length-N index tensor."""
    _check_images(x_t, model.cfg, "x_t")
    n = x_t.shape[0]
    if z.ndim != 2 or z.shape != (n, model.cfg.latent_dim):
        raise ValidationError(f"z: expected shape ({n}, {model.cfg.latent_dim}), got {tuple(z.shape)}")
    t = torch.as_tensor(t).long().reshape(-1)
    if t.numel() == 1 and n > 1:
        t = t.expand(n)
    return model.denoiser(x_t, t, z)


def diffusion_loss(model: DiffusionAutoencoder, x0: Tensor, t: Tensor, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """Mean per-element squared error of the x0 prediction for fixed draws."""
    x_t = forward_diffuse(x0, t, eps, sched)
    z = encode(x0, model)
    x0_hat = denoise(x_t, t, z, model)
    return ((x0_hat - x0) ** 2).mean()


def sample_draws(batch: Tensor, T: int, gen: torch.Generator) -> tuple[Tensor, Tensor]:
    """One uniform timestep and one Gaussian noise field per image."""
    t = torch.randint(0, T, (batch.shape[0],), generator=gen)
    eps = torch.randn(batch.shape, generator=gen, dtype=batch.dtype)
    return t, eps


def loss_and_grad(
    batch: Tensor, model: DiffusionAutoencoder, sched: NoiseSchedule, gen: torch.Generator
) -> tuple[float, dict[str, Tensor]]:
    """Batch-mean reconstruction loss and its gradient for every parameter.

    The encoder sits on the differentiated path, so it is trained by the same
    objective as the denoiser.
    """
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ValidationError("batch: must be a non-empty (N, C, H, W) tensor")
    t, eps = sample_draws(batch, sched.T, gen)
    model.zero_grad(set_to_none=True)
    loss = diffusion_loss(model, batch, t, eps, sched)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    return float(loss.detach()), grads
