"""The work behind each CLI command, callable without argparse.

Pair directories (written by :func:`run_synth`, read by restore/evaluate/ablate)::

    <root>/<id>/clean.f32, clean.png       the artifact-free reference
    <root>/<id>/artifact.f32, artifact.png the degraded input
    <root>/<id>/mask.png                   1 = regenerate
    <root>/<id>/vessels.png                ground-truth vessels of the clean image
    <root>/<id>/meta.json

Restore output: ``<out>/<id>/restored.{f32,png}``, the mask actually used,
and a ``restored.json`` sidecar.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .dataset import load_phantom_dir, save_dataset
from .errors import IngestionError, ValidationError
from .imageio import atomic_write_text, read_image, read_mask, write_image, write_mask
from .inpaint import RestoreOptions, restore
from .masks import extract_artifact_mask, make_synthetic_pair
from .metrics import MetricReport, dice, psnr, segment_vessels, ssim
from .phantom import Phantom, PhantomSpec, generate_phantom, make_dataset
from .rng import image_seed
from .train import TrainResult, train

log = logging.getLogger(__name__)

IMAGE_NAMES = ("artifact", "image")


def write_resolved_config(out: Path, cfg: ExperimentConfig, command: str) -> None:
    cfg = replace(cfg, paths=replace(cfg.paths, out=str(out)))
    atomic_write_text(Path(out) / "resolved_config.json", cfg.dumps())
    log.info("%s: resolved config written to %s", command, out)


def _map_ordered(fn, ids: list[str], jobs: int) -> list:
    """Apply ``fn`` to each id, possibly in parallel; results come back in id order."""
    if jobs <= 1:
        return [fn(i) for i in ids]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, ids))


# phantom ------------------------------------------------------------------


def run_phantom(cfg: ExperimentConfig, out) -> Path:
    out = Path(out)
    phantoms = make_dataset(cfg.dataset.n, cfg.dataset.base_seed, cfg.phantom)
    save_dataset(out, phantoms)
    write_resolved_config(out, cfg, "phantom")
    return out


# train --------------------------------------------------------------------


def run_train(cfg: ExperimentConfig, out, resume: str | None = None) -> TrainResult:
    out = Path(out)
    tcfg = cfg.train_config()
    if not tcfg.dataset:
        raise ValidationError("dataset: no training dataset given (--dataset or paths.dataset)")
    ckpt = Checkpoint.load(resume) if resume else None
    result = train(tcfg, out_dir=out, resume=ckpt)
    report.loss_curve(out / "loss.png", result.log)
    write_resolved_config(out, cfg, "train")
    return result


# synth --------------------------------------------------------------------


def run_synth(cfg: ExperimentConfig, out, clean_dir: str | None = None) -> list[str]:
    """Write ``cfg.synth.n`` (clean, artifact, mask) triples.

    Clean images are generated phantoms (seeds ``synth.seed ..``) unless
    ``clean_dir`` points at an existing phantom dataset, whose first ``n``
    entries are used instead.
    """
    out = Path(out)
    sc = cfg.synth
    if sc.n < 1:
        raise ValidationError("synth.n: must be at least 1")
    if clean_dir:
        dirs = sorted(p for p in Path(clean_dir).iterdir() if p.is_dir() and p.name.startswith("phantom_"))
        if len(dirs) < sc.n:
            raise IngestionError(f"{clean_dir}: has {len(dirs)} phantoms, synth needs {sc.n}")
        cleans = []
        for d in dirs[: sc.n]:
            image, vessels, disc = load_phantom_dir(d)
            meta = json.loads((d / "meta.json").read_text())
            spec = PhantomSpec.from_dict(meta["spec"])
            cleans.append(Phantom(image[..., :3], vessels, disc, int(meta["seed"]), spec))
    else:
        cleans = make_dataset(sc.n, sc.seed, cfg.phantom)
    ids = []
    for k, clean in enumerate(cleans):
        source = generate_phantom(replace(clean.spec, seed=clean.seed + sc.source_seed_offset))
        artifact, mask = make_synthetic_pair(clean, source, seed=image_seed(cfg.seed, f"pair_{k:03d}"), alpha=sc.alpha)
        pid = f"pair_{k:03d}"
        d = out / pid
        write_image(d / "clean", clean.image)
        write_image(d / "artifact", artifact)
        write_mask(d / "mask.png", mask)
        write_mask(d / "vessels.png", clean.vessel_mask)
        meta = {
            "clean_seed": clean.seed,
            "source_seed": source.seed,
            "disc_center": list(clean.disc_center),
            "alpha": sc.alpha,
            "mask_area_frac": float(mask.mean()),
        }
        atomic_write_text(d / "meta.json", json.dumps(meta, indent=2, sort_keys=True))
        ids.append(pid)
    write_resolved_config(out, cfg, "synth")
    return ids


# restore ------------------------------------------------------------------


def discover_inputs(root) -> dict[str, dict]:
    """Map image id to ``{"image": path, "mask": path | None}``.

    Accepts pair subdirectories (``artifact.*`` or ``image.*`` plus ``mask.png``)
    and flat files ``<id>.f32|png`` with optional ``<id>_mask.png``.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root}: input directory not found")
    found: dict[str, dict] = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        for stem in IMAGE_NAMES:
            img = next((sub / f"{stem}{ext}" for ext in (".f32", ".png") if (sub / f"{stem}{ext}").exists()), None)
            if img is not None:
                mask = sub / "mask.png"
                found[sub.name] = {"image": img, "mask": mask if mask.exists() else None}
                break
    for f in sorted(root.iterdir()):
        if f.is_file() and f.suffix in (".f32", ".png") and not f.stem.endswith("_mask"):
            if f.stem in found:
                continue
            mask = root / f"{f.stem}_mask.png"
            found[f.stem] = {"image": f, "mask": mask if mask.exists() else None}
    if not found:
        raise IngestionError(f"{root}: no input images found")
    return found


def _find_ref(ref: str, image_id: str) -> Path:
    p = Path(ref)
    if p.is_file():
        return p
    for cand in (p / image_id / "clean.f32", p / image_id / "image.f32", p / f"{image_id}.f32", p / f"{image_id}.png"):
        if cand.exists():
            return cand
    raise IngestionError(f"{ref}: no reference image for {image_id}")


def run_restore(
    cfg: ExperimentConfig,
    ckpt_path,
    inputs,
    out,
    extract_mask: bool = False,
    ref: str | None = None,
    jobs: int | None = None,
    figures: bool = True,
) -> list[str]:
    out = Path(out)
    ckpt = Checkpoint.load(ckpt_path)
    model = ckpt.build_model()
    sched = ckpt.schedule_config.build()
    opts = cfg.restore
    opts.validate(sched.T)
    if opts.latent_source == "interpolated" and not ref:
        raise ValidationError("--latent interpolated needs --ref")
    found = discover_inputs(inputs)
    missing = [i for i, v in found.items() if v["mask"] is None]
    if missing and not extract_mask:
        raise ValidationError(f"no mask for {', '.join(missing)} (pass --extract-mask to derive one)")

    def work(image_id: str) -> str:
        entry = found[image_id]
        img = read_image(entry["image"])
        if entry["mask"] is not None:
            mask, mask_source = read_mask(entry["mask"]), "file"
        else:
            mask, mask_source = extract_artifact_mask(img), "extracted"
        seed = image_seed(opts.seed, image_id)
        start = time.perf_counter()
        if mask.any():
            ref_img = read_image(_find_ref(ref, image_id)) if opts.latent_source == "interpolated" else None
            restored = restore(img, mask, model, sched, replace(opts, seed=seed), ref=ref_img)
        else:
            restored = img.copy()
        elapsed = time.perf_counter() - start
        d = out / image_id
        write_image(d / "restored", restored)
        write_mask(d / "mask.png", mask)
        sidecar = {
            "image_id": image_id,
            "input": str(entry["image"]),
            "mask_source": mask_source,
            "mask_empty": not bool(mask.any()),
            "options": opts.to_dict(),
            "seed": seed,
            "wall_time_s": elapsed,
            "checkpoint": str(ckpt_path),
        }
        atomic_write_text(d / "restored.json", json.dumps(sidecar, indent=2, sort_keys=True))
        if figures:
            clean_path = entry["image"].parent / "clean.f32"
            clean = read_image(clean_path) if clean_path.exists() else np.zeros_like(img)
            report.restoration_panel(out / "figures" / f"{image_id}.png", clean, img, mask, restored, image_id)
        return image_id

    ids = _map_ordered(work, sorted(found), jobs or cfg.jobs)
    write_resolved_config(out, cfg, "restore")
    return ids


# evaluate -----------------------------------------------------------------


def _ids_with(root: Path, name: str) -> dict[str, Path]:
    if not root.is_dir():
        raise IngestionError(f"{root}: directory not found")
    return {p.name: p / f"{name}.f32" for p in sorted(root.iterdir()) if (p / f"{name}.f32").exists()}


def score(image_id, restored, clean, vessels_gt, mask, mo) -> dict:
    region = None
    if mo.fov_only:
        from .masks import detect_fov

        region = detect_fov(clean)
    seg = segment_vessels(restored, mo.vessel_scale_px, mo.vessel_threshold)
    return {
        "image_id": image_id,
        "psnr_db": psnr(restored, clean, mo.peak, region=region),
        "ssim": ssim(restored, clean, mo.ssim_window, mo.k1, mo.k2, mo.peak),
        "dice_vessels": dice(seg, vessels_gt),
        "mask_area_frac": float(np.asarray(mask).astype(bool).mean()) if mask is not None else 0.0,
    }


def run_evaluate(
    cfg: ExperimentConfig,
    restored_dir,
    clean_dir,
    out,
    restored_name: str = "restored",
    clean_name: str = "clean",
    jobs: int | None = None,
) -> dict:
    """Score restored images against clean references; writes metrics.csv/json and figures.

    When the clean directory also holds ``artifact.f32`` files, the degraded
    inputs are scored too and reported under ``"input"``.
    """
    out = Path(out)
    restored = _ids_with(Path(restored_dir), restored_name)
    clean = _ids_with(Path(clean_dir), clean_name)
    orphans = sorted(set(restored) ^ set(clean))
    if orphans or not restored:
        raise ValidationError(
            f"restored ({len(restored)}) and clean ({len(clean)}) sets differ; orphans: {', '.join(orphans) or 'none'}"
        )
    mo = cfg.metrics

    def load(image_id: str):
        cpath = clean[image_id]
        c = read_image(cpath)
        vpath = cpath.parent / "vessels.png"
        gt = read_mask(vpath) if vpath.exists() else segment_vessels(c, mo.vessel_scale_px, mo.vessel_threshold)
        mpath = next((p for p in (restored[image_id].parent / "mask.png", cpath.parent / "mask.png") if p.exists()), None)
        mask = read_mask(mpath) if mpath else None
        return c, gt, mask

    def work(image_id: str):
        c, gt, mask = load(image_id)
        row = score(image_id, read_image(restored[image_id]), c, gt, mask, mo)
        apath = clean[image_id].parent / "artifact.f32"
        base = score(image_id, read_image(apath), c, gt, mask, mo) if apath.exists() else None
        return row, base

    results = _map_ordered(work, sorted(restored), jobs or cfg.jobs)
    rep = MetricReport()
    for row, _ in results:
        rep.add(row["image_id"], row["psnr_db"], row["ssim"], row["dice_vessels"], row["mask_area_frac"])
    baseline = [b for _, b in results if b is not None]
    summary = {"restored": rep.aggregate()}
    if len(baseline) == len(results):
        base_rep = MetricReport()
        for b in baseline:
            base_rep.add(b["image_id"], b["psnr_db"], b["ssim"], b["dice_vessels"], b["mask_area_frac"])
        summary["input"] = base_rep.aggregate()
        atomic_write_text(out / "metrics_input.csv", base_rep.to_csv())
    else:
        baseline = None
    atomic_write_text(out / "metrics.csv", rep.to_csv())
    atomic_write_text(out / "metrics.json", json.dumps(summary, indent=2, sort_keys=True))
    report.metric_summary(out / "figures" / "metrics.png", rep.rows, baseline)
    write_resolved_config(out, cfg, "evaluate")
    return {"rows": rep.rows, "summary": summary}


# ablate -------------------------------------------------------------------

ABLATION_COLUMNS = ("image_id", "psnr_z1", "psnr_zinterp", "delta")


def run_ablate(cfg: ExperimentConfig, ckpt_path, pairs, out, jobs: int | None = None) -> dict:
    """Restore each pair with the artifact latent and with the interpolated latent; report PSNR deltas."""
    out = Path(out)
    ckpt = Checkpoint.load(ckpt_path)
    model = ckpt.build_model()
    sched = ckpt.schedule_config.build()
    cfg.restore.validate(sched.T)
    pairs = Path(pairs)
    ids = sorted(_ids_with(pairs, "artifact"))
    if not ids:
        raise IngestionError(f"{pairs}: no artifact/clean pairs found")

    def work(image_id: str) -> dict:
        d = pairs / image_id
        art, clean, mask = read_image(d / "artifact.f32"), read_image(d / "clean.f32"), read_mask(d / "mask.png")
        seed = image_seed(cfg.restore.seed, image_id)
        base = replace(cfg.restore, seed=seed, latent_source="from_artifact")
        interp = replace(cfg.restore, seed=seed, latent_source="interpolated")
        r1 = restore(art, mask, model, sched, base)
        r2 = restore(art, mask, model, sched, interp, ref=clean)
        p1, p2 = psnr(r1, clean, cfg.metrics.peak), psnr(r2, clean, cfg.metrics.peak)
        return {"image_id": image_id, "psnr_z1": p1, "psnr_zinterp": p2, "delta": p2 - p1}

    rows = _map_ordered(work, ids, jobs or cfg.jobs)
    deltas = np.array([r["delta"] for r in rows])
    summary = {
        "n": len(rows),
        "lam": cfg.restore.lam,
        "mean_psnr_z1": float(np.mean([r["psnr_z1"] for r in rows])),
        "mean_psnr_zinterp": float(np.mean([r["psnr_zinterp"] for r in rows])),
        "mean_delta": float(deltas.mean()),
    }
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(ABLATION_COLUMNS), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
    atomic_write_text(out / "ablation.csv", buf.getvalue())
    atomic_write_text(out / "ablation.json", json.dumps(summary, indent=2, sort_keys=True))
    report.ablation_plot(out / "figures" / "ablation.png", rows)
    write_resolved_config(out, cfg, "ablate")
    return {"rows": rows, "summary": summary}
