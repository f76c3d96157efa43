"""Diffusion-autoencoder restoration of artifact-corrupted fundus images."""

from .inpaint import RestoreOptions, generate, interpolate_latents, restore
from .model import ModelConfig, denoise, encode, init_params
from .phantom import PhantomSpec, generate_phantom, make_dataset
from .schedule import NoiseSchedule, build_schedule, forward_diffuse, posterior_step

__all__ = [
    "ModelConfig",
    "NoiseSchedule",
    "PhantomSpec",
    "RestoreOptions",
    "build_schedule",
    "denoise",
    "encode",
    "forward_diffuse",
    "generate",
    "generate_phantom",
    "init_params",
    "interpolate_latents",
    "make_dataset",
    "posterior_step",
    "restore",
]

__version__ = "0.1.0"
