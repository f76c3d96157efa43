"""Artifact masks: extraction from degraded images and synthetic injection.

Mask polarity is fixed package-wide: 1 marks artifact pixels to regenerate,
0 marks trusted pixels that restoration must leave untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyFOVError, PlacementError, ValidationError
from .phantom import Phantom
from .rng import PCG32

LUMA = np.array([0.299, 0.587, 0.114])

TAU_FOV = 0.02
TAU_HIGH = 0.92
TAU_LOW = 0.08
OPEN_RADIUS = 1
DILATE_RADIUS = 2


@dataclass
class ArtifactTexture:
    image: np.ndarray  # (H, W, C) in [0, 1], zero off-support
    support: np.ndarray  # (H, W) uint8


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    if img.shape[-1] == 3:
        return img @ LUMA
    raise ValidationError(f"image: expected 1 or 3 channels, got {img.shape[-1]}")


def disk(radius: int) -> np.ndarray:
    """Boolean disk structuring element ``dy**2 + dx**2 <= radius**2``."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return yy**2 + xx**2 <= r * r


def detect_fov(img: np.ndarray, tau_fov: float = TAU_FOV) -> np.ndarray:
    """Filled circle enclosing the largest component brighter than ``tau_fov``.

    The circle is centred on that component's bounding box, with radius equal
    to the farthest component pixel.
    """
    lum = luminance(img)
    labels, count = ndimage.label(lum > tau_fov, structure=np.ones((3, 3)))
    if count == 0:
        raise EmptyFOVError("no field of view: every pixel is below the FOV threshold")
    sizes = np.bincount(labels.ravel())[1:]
    rows, cols = np.nonzero(labels == 1 + int(np.argmax(sizes)))
    cy = 0.5 * (rows.min() + rows.max())
    cx = 0.5 * (cols.min() + cols.max())
    radius = np.sqrt(((rows - cy) ** 2 + (cols - cx) ** 2).max())
    yy, xx = np.mgrid[0 : lum.shape[0], 0 : lum.shape[1]]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2 + 1e-9).astype(np.uint8)


def detect_exposure(img: np.ndarray, tau_high: float, tau_low: float, fov: np.ndarray) -> np.ndarray:
    """Raw (pre-morphology) over/under-exposure detections inside the FOV."""
    lum = luminance(img)
    return ((lum > tau_high) | (lum < tau_low)) & fov.astype(bool)


def extract_artifact_mask(
    img: np.ndarray,
    tau_high: float = TAU_HIGH,
    tau_low: float = TAU_LOW,
    open_radius: int = OPEN_RADIUS,
    dilate_radius: int = DILATE_RADIUS,
    fov: np.ndarray | None = None,
) -> np.ndarray:
    """Threshold, open away speckle, dilate as a margin, and restrict to the FOV."""
    if not 0.0 <= tau_low < tau_high <= 1.0:
        raise ValidationError(f"tau_low/tau_high: need 0 <= tau_low < tau_high <= 1, got {tau_low}, {tau_high}")
    if open_radius < 0 or dilate_radius < 0:
        raise ValidationError("open_radius/dilate_radius: must be non-negative")
    fov = detect_fov(img) if fov is None else fov.astype(bool)
    m = detect_exposure(img, tau_high, tau_low, fov)
    if open_radius > 0:
        m = ndimage.binary_opening(m, structure=disk(open_radius))
    if dilate_radius > 0:
        m = ndimage.binary_dilation(m, structure=disk(dilate_radius))
    return (m & fov.astype(bool)).astype(np.uint8)


def extract_texture(artifact_img: np.ndarray, m: np.ndarray, blur_sigma: float | None = None) -> ArtifactTexture:
    """High-pass component of the artifact, min-max normalized over the mask.

    Normalization is per channel; a constant channel normalizes to zeros
    rather than 0/0.
    """
    support = np.asarray(m).astype(bool)
    if not support.any():
        raise ValidationError("mask: empty, there is no artifact to extract")
    img = np.asarray(artifact_img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if blur_sigma is None:
        blur_sigma = img.shape[0] / 16.0
    blurred = ndimage.gaussian_filter(img, sigma=(blur_sigma, blur_sigma, 0), mode="nearest")
    hp = np.clip(img - blurred, 0.0, None)
    # per channel, so a channel clipped flat by saturation does not wash out the others
    vals = hp[support]
    lo, hi = vals.min(axis=0), vals.max(axis=0)
    span = hi - lo
    flat = span <= 1e-12
    tex = np.where(flat, 0.0, (hp - lo) / np.where(flat, 1.0, span))
    tex = np.where(support[..., None], tex, 0.0)
    return ArtifactTexture(image=tex.astype(np.float32), support=support.astype(np.uint8))


def _translate(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(a)
    h, w = a.shape[:2]
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = a[src_y, src_x]
    return out


def blend_artifact(
    clean: np.ndarray,
    tex: ArtifactTexture,
    m: np.ndarray,
    alpha: float,
    disc_center_src: tuple[int, int],
    disc_center_dst: tuple[int, int],
    fov: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Paste a texture into ``clean`` after aligning optic-disc centres.

    Returns ``(artifact_image, translated_mask)``. Pixels outside the
    translated mask are copied from ``clean`` unchanged.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha: must lie in [0, 1], got {alpha}")
    clean = np.asarray(clean)
    m = np.asarray(m).astype(bool)
    if m.shape != clean.shape[:2] or tex.image.shape[:2] != clean.shape[:2]:
        raise ValidationError("mask: dimensions must equal the image dimensions")
    dy = int(disc_center_dst[0]) - int(disc_center_src[0])
    dx = int(disc_center_dst[1]) - int(disc_center_src[1])
    m_t = _translate(m, dy, dx)
    if m_t.sum() != m.sum():
        raise PlacementError("translated mask leaves the image frame")
    if m_t.any():
        fov = detect_fov(clean) if fov is None else fov
        if (m_t & ~fov.astype(bool)).any():
            raise PlacementError("translated mask leaves the destination field of view")
    tex_t = _translate(tex.image, dy, dx)
    if tex_t.shape[-1] != clean.shape[-1]:
        tex_t = np.broadcast_to(tex_t, clean.shape)
    mixed = np.clip((1.0 - alpha) * clean + alpha * tex_t, 0.0, 1.0).astype(clean.dtype)
    out = np.where(m_t[..., None], mixed, clean)
    return out, m_t.astype(np.uint8)


def add_flash(img: np.ndarray, center: tuple[float, float], radius: float, gain: float = 1.2) -> np.ndarray:
    """Overlay a saturating Gaussian glare (the stand-in for a handheld flash reflection)."""
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    glare = gain * np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2.0 * radius**2))
    fov = detect_fov(img).astype(bool)
    out = np.clip(img + glare[..., None], 0.0, 1.0)
    return np.where(fov[..., None], out, img).astype(img.dtype)


def make_synthetic_pair(
    clean: Phantom, source: Phantom, seed: int, alpha: float = 0.9, max_tries: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Build one (artifact image, mask) pair for a clean phantom.

    A flash is placed near the source phantom's optic disc or macula, its
    mask and texture are extracted, and the texture is blended into the
    clean phantom after disc alignment. Placements that leave the FOV are
    redrawn.
    """
    rng = PCG32(seed, stream=101)
    n = clean.image.shape[0]
    dst_fov = detect_fov(clean.image)
    for _ in range(max_tries):
        dr, dc = source.disc_center
        if rng.random() < 0.5:
            # near the disc
            cy = dr + rng.uniform(-0.12, 0.12) * n
            cx = dc + rng.uniform(-0.12, 0.12) * n
        else:
            # macular region sits opposite the disc about the FOV centre
            cy = (n - 1) - dr + rng.uniform(-0.08, 0.08) * n
            cx = (n - 1) - dc + rng.uniform(-0.08, 0.08) * n
        radius = rng.uniform(0.06, 0.11) * n
        flashed = add_flash(source.image, (cy, cx), radius)
        m = extract_artifact_mask(flashed)
        if not m.any():
            continue
        tex = extract_texture(flashed, m, blur_sigma=n / 8.0)
        try:
            art, m_t = blend_artifact(clean.image, tex, m, alpha, source.disc_center, clean.disc_center, fov=dst_fov)
        except PlacementError:
            continue
        if m_t.any():
            return art, m_t
    raise PlacementError(f"could not place an artifact inside the FOV of phantom seed {clean.seed}")
