"""Matplotlib figures written next to the CSV/JSON outputs of each command."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imageio import atomic_write_bytes  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    import io

    path = Path(path)
    buf = io.BytesIO()
    fig.savefig(buf, format=path.suffix.lstrip(".") or "png", bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
    return path


def _show(ax, img, title):
    img = np.clip(np.asarray(img), 0.0, 1.0)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1, interpolation="nearest")
    ax.set_title(title)
    ax.set_axis_off()


def restoration_panel(path, clean, artifact, mask, restored, title: str = "") -> Path:
    """Clean | artifact | mask | restored, one row."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 4, figsize=(8, 2.3))
        _show(axes[0], clean, "clean")
        _show(axes[1], artifact, "artifact")
        _show(axes[2], mask, "mask")
        _show(axes[3], restored, "restored")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def loss_curve(path, rows: list[dict]) -> Path:
    steps = np.array([r["step"] for r in rows])
    loss = np.array([r["loss"] for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(steps, loss, lw=0.5, alpha=0.4, color="0.5", label="per step")
        k = max(1, len(loss) // 50)
        if len(loss) >= k:
            smooth = np.convolve(loss, np.ones(k) / k, mode="valid")
            ax.plot(steps[k - 1 :], smooth, lw=1.5, color="C0", label=f"mean of {k}")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("x0 MSE")
        ax.legend(frameon=False)
        return _save(fig, path)


def metric_summary(path, rows: list[dict], baseline: list[dict] | None = None) -> Path:
    """Per-image PSNR / SSIM / Dice bars, optionally against a degraded baseline."""
    cols = (("psnr_db", "PSNR (dB)"), ("ssim", "SSIM"), ("dice_vessels", "vessel Dice"))
    ids = [r["image_id"] for r in rows]
    x = np.arange(len(ids))
    width = 0.4 if baseline else 0.8
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 2.8))
        for ax, (key, label) in zip(axes, cols):
            ax.bar(x - (width / 2 if baseline else 0), [r[key] for r in rows], width, label="restored")
            if baseline:
                by_id = {b["image_id"]: b[key] for b in baseline}
                ax.bar(x + width / 2, [by_id.get(i, np.nan) for i in ids], width, label="input", color="0.6")
            ax.set_ylabel(label)
            ax.set_xticks(x)
            ax.set_xticklabels(ids, rotation=90)
        if baseline:
            axes[0].legend(frameon=False)
        return _save(fig, path)


def ablation_plot(path, rows: list[dict]) -> Path:
    """Paired PSNR for the artifact latent vs the interpolated latent."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3))
        for r in rows:
            ax.plot([0, 1], [r["psnr_z1"], r["psnr_zinterp"]], color="0.6", lw=0.8, marker="o", ms=3)
        ax.plot(
            [0, 1],
            [np.mean([r["psnr_z1"] for r in rows]), np.mean([r["psnr_zinterp"] for r in rows])],
            color="C3",
            lw=2,
            marker="o",
            label="mean",
        )
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["z artifact", "z interp"])
        ax.set_ylabel("PSNR (dB)")
        ax.legend(frameon=False)
        return _save(fig, path)
