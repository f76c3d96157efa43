"""Restoration metrics: PSNR, SSIM, Dice and a dark-line vessel segmenter.

Conventions (the defaults every report uses):

* images are compared over the full frame with ``peak = 1``;
  ``fov=True`` restricts PSNR to the field of view instead;
* SSIM uses a uniform ``7x7`` window over valid positions only, sample
  (co)variances, ``k1 = 0.01``, ``k2 = 0.03``, averaged over channels;
* grayscale is ``0.299 R + 0.587 G + 0.114 B``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ValidationError
from .masks import detect_fov, disk, luminance

PSNR_CAP_DB = 99.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0, region: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB when MSE < 1e-12."""
    a, b = _pair(a, b)
    if peak <= 0:
        raise ValidationError("peak: must be positive")
    sq = (a - b) ** 2
    if region is not None:
        sel = np.asarray(region).astype(bool)
        sq = sq[sel]
    mse = float(sq.mean())
    if mse < 1e-12:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a, b, window: int = 7, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """Mean structural similarity over all valid ``window x window`` patches."""
    a, b = _pair(a, b)
    if window < 3 or window % 2 == 0:
        raise ValidationError(f"window: must be odd and >= 3, got {window}")
    if min(a.shape[0], a.shape[1]) < window:
        raise ValidationError(f"image {a.shape[:2]} is smaller than the {window}x{window} window")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    n = window * window
    values = []
    for ch in range(a.shape[2]):
        pa = sliding_window_view(a[..., ch], (window, window))
        pb = sliding_window_view(b[..., ch], (window, window))
        mu_a = pa.mean(axis=(-2, -1))
        mu_b = pb.mean(axis=(-2, -1))
        da = pa - mu_a[..., None, None]
        db = pb - mu_b[..., None, None]
        var_a = (da * da).sum(axis=(-2, -1)) / (n - 1)
        var_b = (db * db).sum(axis=(-2, -1)) / (n - 1)
        cov = (da * db).sum(axis=(-2, -1)) / (n - 1)
        s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
        values.append(s.mean())
    return float(np.mean(values))


def dice(a, b) -> float:
    """``2|A n B| / (|A| + |B|)``; two empty masks score 1."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def segment_vessels(img, scale_px: float = 3.0, threshold: float = 0.25, fov: np.ndarray | None = None) -> np.ndarray:
    """Dark-line detector: black top-hat of the luminance, max-normalized, thresholded.

    Only darker-than-surround structures respond, so bright vessels on a dark
    background are not detected.
    """
    lum = luminance(img)
    fov = detect_fov(img) if fov is None else fov
    inside = fov.astype(bool)
    footprint = disk(int(round(scale_px)))
    tophat = ndimage.grey_closing(lum, footprint=footprint, mode="nearest") - lum
    tophat = np.where(inside, tophat, 0.0)
    peak = tophat.max()
    if peak <= 1e-6:
        return np.zeros(lum.shape, dtype=np.uint8)
    return ((tophat / peak > threshold) & inside).astype(np.uint8)


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("image_id", "psnr_db", "ssim", "dice_vessels", "mask_area_frac")

    def add(self, image_id: str, psnr_db: float, ssim_val: float, dice_val: float, mask_area_frac: float) -> None:
        self.rows.append(
            {
                "image_id": image_id,
                "psnr_db": float(psnr_db),
                "ssim": float(ssim_val),
                "dice_vessels": float(dice_val),
                "mask_area_frac": float(mask_area_frac),
            }
        )

    def aggregate(self) -> dict:
        """Mean and standard deviation (ddof=1 when more than one row) per column."""
        out = {"n": len(self.rows)}
        for col in self.COLUMNS[1:]:
            vals = np.array([r[col] for r in self.rows], dtype=np.float64)
            if vals.size == 0:
                out[col] = {"mean": float("nan"), "std": float("nan")}
                continue
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out[col] = {"mean": float(vals.mean()), "std": std}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.COLUMNS), lineterminator="\n")
        writer.writeheader()
        for row in sorted(self.rows, key=lambda r: r["image_id"]):
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.aggregate(), indent=2, sort_keys=True)


def evaluate_pair(image_id: str, restored, clean, vessels_gt=None, mask=None, report: MetricReport | None = None) -> dict:
    """Score one restored image against its clean reference.

    Vessel Dice compares the segmenter's output on ``restored`` with
    ``vessels_gt`` when given, otherwise with the segmenter's output on
    ``clean``.
    """
    report = report if report is not None else MetricReport()
    reference = segment_vessels(clean) if vessels_gt is None else vessels_gt
    area = float(np.asarray(mask).astype(bool).mean()) if mask is not None else 0.0
    report.add(image_id, psnr(restored, clean), ssim(restored, clean), dice(segment_vessels(restored), reference), area)
    return report.rows[-1]
