from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from fundus_dae.model import ModelConfig

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def toy_config(**kw) -> ModelConfig:
    """8x8 model small enough for float64 finite differences."""
    base = dict(image_size=8, channels=3, latent_dim=4, base_width=8, depth=2, timestep_embed_dim=8, encoder_widths=(8, 8), seed=0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- shared trained model and acceptance reporting --------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Run the full desk pipeline once through the CLI and hand back its artifacts.

    phantom (8 training phantoms, seeds 0-7) -> train (desk preset, 3000 steps)
    -> synth (8 pairs on held-out phantoms, seeds 1000-1007) -> restore ->
    evaluate -> ablate.
    """
    import time

    from fundus_dae.checkpoint import Checkpoint
    from fundus_dae.cli import main

    root = tmp_path_factory.mktemp("desk")
    paths = {k: root / k for k in ("dataset", "train", "pairs", "restored", "evaluate", "ablate")}
    steps = [
        ("phantom", ["phantom", "--n", "8", "--out", str(paths["dataset"])]),
        ("train", ["train", "--dataset", str(paths["dataset"]), "--out", str(paths["train"])]),
        ("synth", ["synth", "--n", "8", "--out", str(paths["pairs"])]),
        ("restore", ["restore", "--ckpt", str(paths["train"] / "ckpt_final.bin"), "--input", str(paths["pairs"]), "--out", str(paths["restored"])]),
        ("evaluate", ["evaluate", "--restored", str(paths["restored"]), "--clean", str(paths["pairs"]), "--out", str(paths["evaluate"])]),
        ("ablate", ["ablate", "--ckpt", str(paths["train"] / "ckpt_final.bin"), "--pairs", str(paths["pairs"]), "--out", str(paths["ablate"])]),
    ]
    codes, times = {}, {}
    for name, argv in steps:
        start = time.perf_counter()
        codes[name] = main(argv)
        times[name] = time.perf_counter() - start
        if codes[name] != 0:
            break
    out = dict(paths, codes=codes, times=times)
    if codes.get("train") == 0:
        out["checkpoint"] = Checkpoint.load(paths["train"] / "ckpt_final.bin")
    return out


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
        results[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
