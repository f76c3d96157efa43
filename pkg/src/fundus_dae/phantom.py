"""Procedural fundus-like phantoms with ground-truth vessel masks.

Every random choice comes from :class:`~fundus_dae.rng.PCG32` seeded with
the seed stored in the PhantomSpec, so equal specs always render the same phantom.
If the vessel tree covers too little or too much of the field of view the
phantom is regenerated on the next pcg32 stream (stream id = attempt index).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import GenerationError, ValidationError
from .rng import PCG32

MAX_ATTEMPTS = 16
COVERAGE_BAND = (0.02, 0.20)
BEZIER_SAMPLES = 24


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    fov_radius_frac: float = 0.92
    disc_radius_frac: float = 0.14
    n_vessel_roots: int = 4
    branch_depth: int = 3
    vessel_width_px: float = 2.2
    background_tone: tuple[float, float, float] = (0.78, 0.36, 0.16)
    vessel_tone: tuple[float, float, float] = (0.45, 0.12, 0.06)
    disc_tone: tuple[float, float, float] = (0.96, 0.82, 0.55)
    seed: int = 0

    def validate(self) -> None:
        if self.size < 8:
            raise ValidationError(f"size: must be at least 8, got {self.size}")
        if not 0.0 < self.fov_radius_frac <= 1.0:
            raise ValidationError("fov_radius_frac: must lie in (0, 1]")
        if not 0.0 < self.disc_radius_frac < 0.5:
            raise ValidationError("disc_radius_frac: must lie in (0, 0.5)")
        if self.n_vessel_roots < 1:
            raise ValidationError("n_vessel_roots: must be at least 1")
        if self.branch_depth < 1:
            raise ValidationError("branch_depth: must be at least 1")
        if self.vessel_width_px <= 0:
            raise ValidationError("vessel_width_px: must be positive")
        for name in ("background_tone", "vessel_tone", "disc_tone"):
            tone = getattr(self, name)
            if len(tone) != 3 or not all(0.0 <= v <= 1.0 for v in tone):
                raise ValidationError(f"{name}: need three values in [0, 1]")
        if any(v >= min(b, d) for v, b, d in zip(self.vessel_tone, self.background_tone, self.disc_tone)):
            raise ValidationError("vessel_tone: must be darker than background_tone and disc_tone in every channel")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("background_tone", "vessel_tone", "disc_tone"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        for k in ("background_tone", "vessel_tone", "disc_tone"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Phantom:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    vessel_mask: np.ndarray  # (H, W) uint8, 1 = vessel
    disc_center: tuple[int, int]
    seed: int
    spec: PhantomSpec


def _bezier(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    s = np.linspace(0.0, 1.0, BEZIER_SAMPLES)[:, None]
    return (1 - s) ** 2 * p0 + 2 * (1 - s) * s * p1 + s**2 * p2


def _polyline_distance(pts: np.ndarray, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    """Distance from every pixel center to a polyline given as (K, 2) (row, col) points."""
    best = np.full(yy.shape, np.inf)
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        denom = float(d @ d)
        if denom == 0.0:
            u = np.zeros_like(yy)
        else:
            u = np.clip(((yy - a[0]) * d[0] + (xx - a[1]) * d[1]) / denom, 0.0, 1.0)
        dist = np.hypot(yy - (a[0] + u * d[0]), xx - (a[1] + u * d[1]))
        np.minimum(best, dist, out=best)
    return best


def _grow_tree(rng: PCG32, start, angle: float, length: float, width: float, depth: int, out: list) -> None:
    p0 = np.asarray(start, dtype=np.float64)
    direction = np.array([math.sin(angle), math.cos(angle)])
    normal = np.array([direction[1], -direction[0]])
    p2 = p0 + length * direction
    p1 = 0.5 * (p0 + p2) + rng.uniform(-0.25, 0.25) * length * normal
    out.append((_bezier(p0, p1, p2), width))
    if depth <= 1:
        return
    tangent = p2 - p1
    end_angle = math.atan2(tangent[0], tangent[1])
    for sign in (-1.0, 1.0):
        spread = math.radians(rng.uniform(20.0, 40.0))
        _grow_tree(rng, p2, end_angle + sign * spread, 0.75 * length * rng.uniform(0.85, 1.15), 0.8 * width, depth - 1, out)


def _render(spec: PhantomSpec, rng: PCG32) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    n = spec.size
    half = n / 2.0
    center = (n - 1) / 2.0
    fov_r = spec.fov_radius_frac * half
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    r = np.hypot(yy - center, xx - center)
    fov = r <= fov_r

    side = -1.0 if rng.random() < 0.5 else 1.0
    disc_row = center + rng.uniform(-0.08, 0.08) * fov_r
    disc_col = center + side * rng.uniform(0.30, 0.45) * fov_r
    disc_center = (int(round(disc_row)), int(round(disc_col)))
    disc_r = spec.disc_radius_frac * half

    strokes: list = []
    base_angle = rng.uniform(0.0, 2.0 * math.pi)
    for k in range(spec.n_vessel_roots):
        theta = base_angle + 2.0 * math.pi * k / spec.n_vessel_roots + rng.uniform(-0.3, 0.3)
        start = (disc_row + disc_r * math.sin(theta), disc_col + disc_r * math.cos(theta))
        length = rng.uniform(0.35, 0.5) * fov_r
        _grow_tree(rng, start, theta + rng.uniform(-0.2, 0.2), length, spec.vessel_width_px, spec.branch_depth, strokes)

    vessel_cov = np.zeros((n, n))
    for pts, width in strokes:
        cov = np.clip(width / 2.0 + 0.5 - _polyline_distance(pts, yy, xx), 0.0, 1.0)
        np.maximum(vessel_cov, cov, out=vessel_cov)
    vessel_cov *= fov

    falloff = (1.0 - 0.35 * np.clip(r / fov_r, 0.0, 1.0) ** 2)[..., None]
    ell = np.hypot((yy - disc_row) / disc_r, (xx - disc_col) / (1.15 * disc_r))
    disc_cov = np.clip((1.0 - ell) * disc_r + 0.5, 0.0, 1.0)[..., None]
    bg = np.asarray(spec.background_tone) * falloff
    base = bg + disc_cov * (np.asarray(spec.disc_tone) * falloff - bg)
    vessel_col = np.asarray(spec.vessel_tone) * falloff
    img = base + vessel_cov[..., None] * (vessel_col - base)
    img = np.where(fov[..., None], np.clip(img, 0.0, 1.0), 0.0)
    mask = ((vessel_cov >= 0.5) & fov).astype(np.uint8)
    return img.astype(np.float32), mask, disc_center


def generate_phantom(spec: PhantomSpec) -> Phantom:
    """Render one phantom; regenerates on a fresh stream if vessel coverage is off-band."""
    spec.validate()
    n = spec.size
    center = (n - 1) / 2.0
    fov_r = spec.fov_radius_frac * n / 2.0
    fov_area = float(np.count_nonzero(np.hypot(*(np.mgrid[0:n, 0:n] - center)) <= fov_r))
    for attempt in range(MAX_ATTEMPTS):
        rng = PCG32(spec.seed, stream=attempt)
        img, mask, disc_center = _render(spec, rng)
        frac = mask.sum() / fov_area
        inside = math.hypot(disc_center[0] - center, disc_center[1] - center) < fov_r
        if COVERAGE_BAND[0] <= frac <= COVERAGE_BAND[1] and inside:
            return Phantom(image=img, vessel_mask=mask, disc_center=disc_center, seed=spec.seed, spec=spec)
    raise GenerationError(f"no phantom within vessel coverage band {COVERAGE_BAND} after {MAX_ATTEMPTS} attempts for {spec}")


def make_dataset(n: int, base_seed: int, spec: PhantomSpec | None = None) -> list[Phantom]:
    """Phantoms for seeds ``base_seed .. base_seed + n - 1``."""
    if n < 1:
        raise ValidationError(f"n: must be at least 1, got {n}")
    spec = spec or PhantomSpec()
    out = []
    for i in range(n):
        try:
            out.append(generate_phantom(replace(spec, seed=base_seed + i)))
        except GenerationError as exc:
            raise GenerationError(f"phantom index {i} (seed {base_seed + i}): {exc}") from exc
    return out
