"""``fundus-dae`` command line.

Exit codes: 0 ok, 2 validation, 3 I/O, 4 numeric abort. The output root
defaults to ``output_root`` from the config, overridden by the
``FUNDUS_DAE_OUTPUT_ROOT`` environment variable, overridden by ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, preset
from .errors import FundusDAEError, ValidationError

log = logging.getLogger("fundus_dae")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config (JSON); flags override it")
    p.add_argument("--preset", choices=("desk", "full"), help="start from a preset instead of a config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--jobs", type=int, help="worker bound for per-image fan-out")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fundus-dae", description="Diffusion-autoencoder fundus artifact restoration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a clean phantom dataset")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--roots", type=int, dest="n_vessel_roots")
    p.add_argument("--depth", type=int, dest="branch_depth")

    p = sub.add_parser("train", help="train on clean images only")
    _common(p)
    p.add_argument("--dataset", help="clean dataset directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("synth", help="build (clean, artifact, mask) triples")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--size", type=int)
    p.add_argument("--from-dataset", help="use clean phantoms from this dataset instead of generating")

    p = sub.add_parser("restore", help="restore masked regions of a directory of images")
    _common(p)
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--input", help="directory of images (and masks)")
    p.add_argument("--extract-mask", action="store_true", help="derive masks for images that have none")
    p.add_argument("--latent", choices=("from_artifact", "interpolated"), dest="latent_source")
    p.add_argument("--ref", help="clean reference image or directory (for --latent interpolated)")
    p.add_argument("--lam", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--resample", type=int, dest="resample_count")
    p.add_argument("--literal-mean", action="store_true", default=None)

    p = sub.add_parser("evaluate", help="score restored images against clean references")
    _common(p)
    p.add_argument("--restored", help="restore output directory")
    p.add_argument("--clean", help="directory with <id>/clean.f32 (e.g. synth output)")
    p.add_argument("--restored-name", default="restored")
    p.add_argument("--clean-name", default="clean")
    p.add_argument("--fov-only", action="store_true", default=None)

    p = sub.add_parser("ablate", help="artifact latent vs interpolated latent, paired PSNR")
    _common(p)
    p.add_argument("--ckpt")
    p.add_argument("--pairs", help="synth output directory")
    p.add_argument("--lam", type=float)
    p.add_argument("--steps", type=int)
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ValidationError("--config and --preset are mutually exclusive")
    cfg = ExperimentConfig.load(args.config) if args.config else preset(args.preset or "desk")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise ValidationError("jobs: must be at least 1")
        cfg.jobs = args.jobs
    return cfg


def _set(obj, **kw):
    from dataclasses import replace

    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(obj, **kw) if kw else obj


def _out(args, cfg: ExperimentConfig, command: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.paths.out:
        return Path(cfg.paths.out)
    return cfg.resolved_output_root() / command


def _require(value, flag: str) -> str:
    if not value:
        raise ValidationError(f"{flag}: required")
    return value


def run(args) -> int:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "phantom":
        cfg.dataset = _set(cfg.dataset, n=args.n, base_seed=args.seed)
        cfg.phantom = _set(cfg.phantom, size=args.size, n_vessel_roots=args.n_vessel_roots, branch_depth=args.branch_depth)
        cfg.phantom.validate()
        if cfg.dataset.n < 1:
            raise ValidationError("n: must be at least 1")
        out = pipeline.run_phantom(cfg, _out(args, cfg, cmd))
        print(f"wrote {cfg.dataset.n} phantoms to {out}")
    elif cmd == "train":
        cfg.paths = _set(cfg.paths, dataset=args.dataset)
        cfg.train = _set(
            cfg.train,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr_init=args.lr,
            checkpoint_every=args.checkpoint_every,
            seed=args.seed,
        )
        out = _out(args, cfg, cmd)
        result = pipeline.run_train(cfg, out, resume=args.resume)
        print(f"trained {len(result.log)} steps, final loss {result.log[-1]['loss']:.5f}; checkpoint {out / 'ckpt_final.bin'}")
    elif cmd == "synth":
        cfg.synth = _set(cfg.synth, n=args.n, alpha=args.alpha, seed=args.seed)
        cfg.phantom = _set(cfg.phantom, size=args.size)
        if not 0.0 <= cfg.synth.alpha <= 1.0:
            raise ValidationError("alpha: must lie in [0, 1]")
        out = _out(args, cfg, cmd)
        ids = pipeline.run_synth(cfg, out, clean_dir=args.from_dataset)
        print(f"wrote {len(ids)} synthetic pairs to {out}")
    elif cmd == "restore":
        cfg.paths = _set(cfg.paths, checkpoint=args.ckpt, pairs=args.input, ref=args.ref)
        cfg.restore = _set(
            cfg.restore,
            latent_source=args.latent_source,
            lam=args.lam,
            steps=args.steps,
            resample_count=args.resample_count,
            literal_mean=args.literal_mean,
            seed=args.seed,
        )
        out = _out(args, cfg, cmd)
        ids = pipeline.run_restore(
            cfg,
            _require(cfg.paths.checkpoint, "--ckpt"),
            _require(cfg.paths.pairs, "--input"),
            out,
            extract_mask=args.extract_mask,
            ref=cfg.paths.ref or None,
        )
        print(f"restored {len(ids)} images into {out}")
    elif cmd == "evaluate":
        cfg.paths = _set(cfg.paths, restored=args.restored, clean=args.clean)
        cfg.metrics = _set(cfg.metrics, fov_only=args.fov_only)
        out = _out(args, cfg, cmd)
        res = pipeline.run_evaluate(
            cfg,
            _require(cfg.paths.restored, "--restored"),
            _require(cfg.paths.clean, "--clean"),
            out,
            restored_name=args.restored_name,
            clean_name=args.clean_name,
        )
        agg = res["summary"]["restored"]
        print(
            "n={n} psnr={p[mean]:.2f}±{p[std]:.2f} dB ssim={s[mean]:.3f}±{s[std]:.3f} dice={d[mean]:.3f}±{d[std]:.3f}".format(
                n=agg["n"], p=agg["psnr_db"], s=agg["ssim"], d=agg["dice_vessels"]
            )
        )
    elif cmd == "ablate":
        cfg.paths = _set(cfg.paths, checkpoint=args.ckpt, pairs=args.pairs)
        cfg.restore = _set(cfg.restore, lam=args.lam, steps=args.steps, seed=args.seed)
        out = _out(args, cfg, cmd)
        res = pipeline.run_ablate(cfg, _require(cfg.paths.checkpoint, "--ckpt"), _require(cfg.paths.pairs, "--pairs"), out)
        s = res["summary"]
        print(f"mean PSNR z1 {s['mean_psnr_z1']:.2f} dB, z_interp {s['mean_psnr_zinterp']:.2f} dB, delta {s['mean_delta']:+.2f} dB")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except FundusDAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
