"""On-disk phantom datasets and clean-image ingestion for training.

Layout written by :func:`save_dataset`::

    <root>/phantom_<seed>/image.f32   lossless raster
    <root>/phantom_<seed>/image.png   viewing copy
    <root>/phantom_<seed>/vessels.png 1-bit vessel mask
    <root>/phantom_<seed>/meta.json   disc_center and the generating spec

:func:`load_clean_images` also accepts a flat directory of ``*.f32`` /
``*.png`` files so that user images can be trained on. It refuses anything
that looks like an artifact pair or a mask.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IngestionError, ValidationError
from .imageio import atomic_write_text, read_image, write_f32, write_mask, write_png
from .phantom import Phantom, PhantomSpec

# file names that only ever belong to artifact/restoration data
_FORBIDDEN = ("mask.png", "artifact.f32", "artifact.png", "restored.f32")


def save_phantom(root: Path, ph: Phantom) -> Path:
    d = Path(root) / f"phantom_{ph.seed}"
    write_f32(d / "image.f32", ph.image)
    write_png(d / "image.png", ph.image)
    write_mask(d / "vessels.png", ph.vessel_mask)
    meta = {"disc_center": list(ph.disc_center), "seed": ph.seed, "spec": ph.spec.to_dict()}
    atomic_write_text(d / "meta.json", json.dumps(meta, indent=2, sort_keys=True))
    return d


def save_dataset(root, phantoms: list[Phantom]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for ph in phantoms:
        save_phantom(root, ph)
    return root


def _sample_paths(root: Path) -> list[Path]:
    if not root.is_dir():
        raise IngestionError(f"{root}: dataset directory not found")
    paths = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        bad = [name for name in _FORBIDDEN if (sub / name).exists()]
        if bad:
            raise ValidationError(f"{sub}: contains {bad[0]}; training consumes clean images only")
        for name in ("image.f32", "image.png"):
            if (sub / name).exists():
                paths.append(sub / name)
                break
    for f in sorted(root.iterdir()):
        if f.is_file() and f.suffix in (".f32", ".png"):
            if f.stem.startswith(("mask", "artifact")) or f.stem.endswith(("_mask", "_artifact")):
                raise ValidationError(f"{f}: looks like a mask or artifact image; training consumes clean images only")
            paths.append(f)
    if not paths:
        raise IngestionError(f"{root}: no images found")
    return paths


def load_clean_images(root, image_size: int | None = None, channels: int | None = None) -> tuple[list[str], np.ndarray]:
    """Return ``(ids, images)`` with images stacked as (N, H, W, C) float32."""
    root = Path(root)
    ids, imgs = [], []
    for path in _sample_paths(root):
        img = read_image(path)
        if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
            raise IngestionError(f"{path}: values must be finite and within [0, 1]")
        if image_size is not None and img.shape[:2] != (image_size, image_size):
            raise IngestionError(f"{path}: size {img.shape[:2]} does not match configured {image_size}")
        if channels is not None and img.shape[2] != channels:
            raise IngestionError(f"{path}: {img.shape[2]} channels, model expects {channels}")
        ids.append(path.parent.name if path.name.startswith("image.") else path.stem)
        imgs.append(img)
    return ids, np.stack(imgs)


def load_phantom_dir(d) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """``(image, vessel_mask, disc_center)`` from one ``phantom_<seed>`` directory."""
    from .imageio import read_f32, read_mask

    d = Path(d)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{d / 'meta.json'}: {exc}") from exc
    return read_f32(d / "image.f32"), read_mask(d / "vessels.png"), tuple(meta["disc_center"])
