from __future__ import annotations

import numpy as np
import pytest
import torch

from conftest import toy_config
from gradcheck import finite_difference_errors

from fundus_dae.errors import ValidationError
from fundus_dae.model import ModelConfig, denoise, diffusion_loss, encode, init_params, loss_and_grad, timestep_embedding
from fundus_dae.phantom import make_dataset
from fundus_dae.schedule import build_schedule


def _images(n=2, seed=0):
    return torch.from_numpy(np.stack([p.image for p in make_dataset(n, seed)]).transpose(0, 3, 1, 2).copy())


def test_init_is_deterministic():
    a, b = init_params(ModelConfig()), init_params(ModelConfig())
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    c = init_params(ModelConfig(seed=1))
    assert not torch.equal(a.encoder.head.weight, c.encoder.head.weight)


def test_init_scheme():
    m = init_params(toy_config())
    w = m.denoiser.in_conv.weight.detach()
    bound = 1 / np.sqrt(w[0].numel())
    assert float(w.abs().max()) <= bound
    assert torch.all(m.denoiser.in_conv.bias == 0)
    assert torch.all(m.denoiser.out_norm.weight == 1)


@pytest.mark.parametrize(
    "kw, field",
    [(dict(image_size=12, depth=3), "depth"), (dict(groups=3), "groups"), (dict(latent_dim=0), "latent_dim"),
     (dict(image_size=16, encoder_widths=(8, 8, 8, 8)), "encoder_widths")],
)
def test_invalid_config(kw, field):
    with pytest.raises(ValidationError, match=field):
        init_params(ModelConfig(**kw))


def test_shape_table_and_output_shapes():
    cfg = ModelConfig()
    model = init_params(cfg)
    table = model.shape_table()
    assert table["encoder.head.weight"] == [cfg.latent_dim, cfg.encoder_widths[-1]]
    x = _images(2)
    z = encode(x, model)
    assert z.shape == (2, cfg.latent_dim)
    for t in (0, 57, 199):
        assert denoise(x, t, z, model).shape == x.shape


def test_encode_properties():
    model = init_params(ModelConfig())
    x = _images(2)
    with torch.no_grad():
        z1, z2 = encode(x, model), encode(x, model)
        assert torch.equal(z1, z2)
        assert float((z1[0] - z1[1]).norm()) > 0
        assert torch.isfinite(encode(torch.zeros(1, 3, 64, 64), model)).all()
        # totality under a small perturbation
        zp = encode(x + 1e-3 * torch.rand(x.shape, generator=torch.Generator().manual_seed(0)), model)
        assert torch.isfinite(zp).all() and float((zp - z1).norm()) < 1.0


def test_denoise_shape_errors():
    model = init_params(toy_config())
    with pytest.raises(ValidationError):
        encode(torch.zeros(1, 3, 16, 16), model)
    with pytest.raises(ValidationError):
        denoise(torch.zeros(1, 3, 8, 8), 0, torch.zeros(1, 5), model)


def test_denoise_deterministic():
    model = init_params(toy_config())
    x = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(1))
    z = torch.randn(2, 4, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        assert torch.equal(denoise(x, 3, z, model), denoise(x, 3, z, model))


def test_timestep_embedding_layout():
    e = timestep_embedding(torch.tensor([0, 5]), 8)
    assert e.shape == (2, 8)
    assert torch.equal(e[0], torch.tensor([0, 0, 0, 0, 1, 1, 1, 1], dtype=torch.float64))


def test_init_loss_finite_and_positive():
    model = init_params(ModelConfig())
    loss, grads = loss_and_grad(_images(2), model, build_schedule(200), torch.Generator().manual_seed(0))
    assert np.isfinite(loss) and loss > 0
    assert set(grads) == {k for k, _ in model.named_parameters()}


def test_perfect_prediction_gives_zero_loss_and_output_grads():
    model = init_params(toy_config())
    with torch.no_grad():
        model.denoiser.out_conv.weight.zero_()
    loss, grads = loss_and_grad(torch.zeros(2, 3, 8, 8), model, build_schedule(10), torch.Generator().manual_seed(0))
    assert loss == 0.0
    assert torch.all(grads["denoiser.out_conv.weight"] == 0)
    assert torch.all(grads["denoiser.out_conv.bias"] == 0)


def test_loss_invariant_to_batch_order():
    model = init_params(toy_config()).double()
    sched = build_schedule(20)
    x0 = torch.rand(3, 3, 8, 8, dtype=torch.float64)
    t = torch.tensor([2, 9, 17])
    eps = torch.randn(3, 3, 8, 8, dtype=torch.float64)
    perm = torch.tensor([2, 0, 1])
    with torch.no_grad():
        a = diffusion_loss(model, x0, t, eps, sched)
        b = diffusion_loss(model, x0[perm], t[perm], eps[perm], sched)
    assert float(a) == pytest.approx(float(b), rel=1e-12)


def test_empty_batch_rejected():
    with pytest.raises(ValidationError):
        loss_and_grad(torch.zeros(0, 3, 8, 8), init_params(toy_config()), build_schedule(10), torch.Generator())


def test_gradients_match_finite_differences():
    errs, picks = finite_difference_errors(toy_config(), n_coords=240)
    assert len(errs) >= 200
    worst = int(np.argmax(errs))
    assert errs.max() < 1e-3, f"worst {picks[worst]}: {errs[worst]:.2e}"
