from __future__ import annotations

import json

import numpy as np
import pytest

from fundus_dae.checkpoint import Checkpoint
from fundus_dae.cli import main
from fundus_dae.config import ExperimentConfig
from fundus_dae.imageio import read_f32, read_mask, write_f32

SMALL = {
    "phantom": {"size": 32, "vessel_width_px": 1.2},
    "model": {"image_size": 32, "latent_dim": 8, "base_width": 8, "encoder_widths": [8, 8, 8, 8], "timestep_embed_dim": 16},
    "schedule": {"T": 10},
    "train": {"epochs": 2, "batch_size": 2, "lr_init": 0.002},
    "synth": {"n": 3},
}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    c = ["--config", str(cfg)]
    codes = {
        "phantom": main(["phantom", *c, "--n", "4", "--out", str(root / "ds")]),
        "train": main(["train", *c, "--dataset", str(root / "ds"), "--checkpoint-every", "1", "--out", str(root / "tr")]),
        "synth": main(["synth", *c, "--out", str(root / "pairs")]),
    }
    ck = str(root / "tr" / "ckpt_final.bin")
    codes["restore"] = main(["restore", *c, "--ckpt", ck, "--input", str(root / "pairs"), "--steps", "5", "--out", str(root / "rs")])
    codes["evaluate"] = main(["evaluate", *c, "--restored", str(root / "rs"), "--clean", str(root / "pairs"), "--out", str(root / "ev")])
    codes["ablate"] = main(["ablate", *c, "--ckpt", ck, "--pairs", str(root / "pairs"), "--steps", "5", "--out", str(root / "ab")])
    return root, codes, c


def test_all_commands_succeed(small_run):
    root, codes, _ = small_run
    assert codes == dict.fromkeys(codes, 0)


def test_phantom_output_layout(small_run):
    root, _, _ = small_run
    names = sorted(p.name for p in (root / "ds").iterdir() if p.is_dir())
    assert names == ["phantom_0", "phantom_1", "phantom_2", "phantom_3"]
    d = root / "ds" / "phantom_0"
    assert {"image.f32", "image.png", "vessels.png", "meta.json"} <= {p.name for p in d.iterdir()}
    assert read_f32(d / "image.f32").shape == (32, 32, 3)
    cfg = ExperimentConfig.load(root / "ds" / "resolved_config.json")
    assert cfg.phantom.size == 32 and cfg.dataset.n == 4


def test_train_outputs(small_run):
    root, _, _ = small_run
    tr = root / "tr"
    for name in ("ckpt_epoch_1.bin", "ckpt_epoch_2.bin", "ckpt_final.bin", "loss.csv", "loss.png", "resolved_config.json"):
        assert (tr / name).exists(), name
    lines = (tr / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,epoch,lr,loss" and len(lines) == 1 + 4
    ck = Checkpoint.load(tr / "ckpt_final.bin")
    assert ck.model_config.image_size == 32 and ck.state["epoch"] == 2


def test_synth_restore_evaluate_ablate_outputs(small_run):
    root, _, _ = small_run
    pairs = sorted(p.name for p in (root / "pairs").iterdir() if p.is_dir())
    assert pairs == ["pair_000", "pair_001", "pair_002"]
    meta = json.loads((root / "pairs" / "pair_000" / "meta.json").read_text())
    assert meta["clean_seed"] == 1000
    for pid in pairs:
        art = read_f32(root / "pairs" / pid / "artifact.f32")
        m = read_mask(root / "pairs" / pid / "mask.png")
        out = read_f32(root / "rs" / pid / "restored.f32")
        assert np.array_equal(out[m == 0], art[m == 0])
        side = json.loads((root / "rs" / pid / "restored.json").read_text())
        assert side["options"]["steps"] == 5 and side["mask_source"] == "file"
        assert (root / "rs" / "figures" / f"{pid}.png").exists()
    summary = json.loads((root / "ev" / "metrics.json").read_text())
    assert set(summary) == {"restored", "input"} and summary["restored"]["n"] == 3
    assert (root / "ev" / "metrics.csv").read_text().startswith("image_id,psnr_db,ssim,dice_vessels,mask_area_frac")
    assert (root / "ev" / "figures" / "metrics.png").exists()
    abl = json.loads((root / "ab" / "ablation.json").read_text())
    assert abl["n"] == 3 and abl["lam"] == 0.5
    assert (root / "ab" / "ablation.csv").read_text().startswith("image_id,psnr_z1,psnr_zinterp,delta")
    assert (root / "ab" / "figures" / "ablation.png").exists()


def test_resolved_config_reproduces_run(small_run, tmp_path):
    root, _, _ = small_run
    resolved = root / "rs" / "resolved_config.json"
    assert main(["restore", "--config", str(resolved), "--out", str(tmp_path / "again")]) == 0
    for pid in ("pair_000", "pair_001"):
        assert (tmp_path / "again" / pid / "restored.f32").read_bytes() == (root / "rs" / pid / "restored.f32").read_bytes()


def test_restore_needs_masks_or_extraction(small_run, tmp_path):
    root, _, c = small_run
    flat = tmp_path / "flat"
    write_f32(flat / "img.f32", read_f32(root / "pairs" / "pair_000" / "artifact.f32"))
    ck = str(root / "tr" / "ckpt_final.bin")
    assert main(["restore", *c, "--ckpt", ck, "--input", str(flat), "--out", str(tmp_path / "o1")]) == 2
    assert main(["restore", *c, "--ckpt", ck, "--input", str(flat), "--extract-mask", "--steps", "3", "--out", str(tmp_path / "o2")]) == 0
    side = json.loads((tmp_path / "o2" / "img" / "restored.json").read_text())
    assert side["mask_source"] == "extracted"


def test_restore_size_mismatch_exit_code(small_run, tmp_path):
    root, _, c = small_run
    flat = tmp_path / "big"
    write_f32(flat / "img.f32", np.full((64, 64, 3), 0.5, np.float32))
    from fundus_dae.imageio import write_mask

    write_mask(flat / "img_mask.png", np.ones((64, 64)))
    assert main(["restore", *c, "--ckpt", str(root / "tr" / "ckpt_final.bin"), "--input", str(flat), "--out", str(tmp_path / "o")]) == 3


def test_evaluate_orphans_rejected(small_run, tmp_path, capsys):
    root, _, c = small_run
    assert main(["evaluate", *c, "--restored", str(root / "rs"), "--clean", str(root / "ds"), "--clean-name", "image", "--out", str(tmp_path)]) == 2
    assert "orphans" in capsys.readouterr().err


def test_validation_exit_codes(tmp_path, capsys):
    assert main(["phantom", "--n", "0", "--out", str(tmp_path / "p")]) == 2
    assert main(["phantom", "--roots", "0", "--out", str(tmp_path / "p")]) == 2
    assert main(["synth", "--alpha", "1.5", "--out", str(tmp_path / "s")]) == 2
    assert main(["train", "--out", str(tmp_path / "t")]) == 2
    assert main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "t")]) == 3
    assert main(["restore", "--ckpt", str(tmp_path / "none.bin"), "--input", str(tmp_path), "--out", str(tmp_path / "r")]) == 3
    assert main(["phantom", "--config", "x.json", "--preset", "desk"]) == 2
    capsys.readouterr()
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_output_root_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("FUNDUS_DAE_OUTPUT_ROOT", str(tmp_path / "envroot"))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"phantom": SMALL["phantom"]}))
    assert main(["phantom", "--config", str(cfg), "--n", "1"]) == 0
    assert (tmp_path / "envroot" / "phantom" / "phantom_0" / "image.f32").exists()
