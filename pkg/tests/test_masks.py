from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from fundus_dae.errors import EmptyFOVError, PlacementError, ValidationError
from fundus_dae.masks import (
    ArtifactTexture,
    detect_exposure,
    detect_fov,
    disk,
    extract_artifact_mask,
    extract_texture,
    blend_artifact,
    make_synthetic_pair,
)
from fundus_dae.metrics import dice
from fundus_dae.phantom import make_dataset


def _circle(n, cy, cx, r):
    yy, xx = np.mgrid[0:n, 0:n]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _gray_fov(n=48, value=0.5, r=None):
    r = r if r is not None else 0.45 * n
    c = (n - 1) / 2
    img = np.zeros((n, n, 3))
    img[_circle(n, c, c, r)] = value
    return img


# Hand-rolled morphology, shift-and-combine over the disk offsets.
def _dilate(m, r):
    out = np.zeros_like(m)
    h, w = m.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy * dy + dx * dx > r * r:
                continue
            shifted = np.zeros_like(m)
            shifted[max(0, dy) : h + min(0, dy), max(0, dx) : w + min(0, dx)] = m[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
            out |= shifted
    return out


def _erode(m, r):
    return ~_dilate(~m, r)


def test_all_black_raises_empty_fov():
    with pytest.raises(EmptyFOVError):
        detect_fov(np.zeros((16, 16, 3)))


@pytest.mark.parametrize("r", [6, 12, 20])
def test_fov_of_synthetic_disk(r):
    n = 48
    truth = _circle(n, 23, 25, r)
    img = np.where(truth[..., None], 0.6, 0.0)
    got = detect_fov(img).astype(bool)
    # every disagreement lies within 2 px of the true boundary
    dist_in = ndimage.distance_transform_edt(truth)
    dist_out = ndimage.distance_transform_edt(~truth)
    boundary_dist = np.where(truth, dist_in, dist_out)
    assert np.all(boundary_dist[got != truth] <= 2)


def test_full_white_fov_is_inscribed_circle():
    n = 32
    got = detect_fov(np.ones((n, n, 3))).astype(bool)
    c = (n - 1) / 2
    inscribed = _circle(n, c, c, n / 2 - 0.5)
    assert got[inscribed].all()


def test_mid_gray_gives_empty_mask():
    assert extract_artifact_mask(_gray_fov()).sum() == 0


def test_saturated_disk_against_hand_morphology():
    n = 48
    img = _gray_fov(n)
    spot = _circle(n, 20, 26, 5)
    img[spot] = 1.0
    got = extract_artifact_mask(img, open_radius=1, dilate_radius=2).astype(bool)
    fov = detect_fov(img).astype(bool)
    raw = spot & fov
    expected = _dilate(_dilate(_erode(raw, 1), 1), 2) & fov
    assert np.array_equal(got, expected)
    # and it is (approximately) the radius-7 disk
    assert np.array_equal(got, _circle(n, 20, 26, 7)) or dice(got, _circle(n, 20, 26, 7)) > 0.95


def test_entire_fov_saturated_gives_fov():
    img = _gray_fov(value=1.0)
    fov = detect_fov(img)
    np.testing.assert_array_equal(extract_artifact_mask(img), fov)


def test_threshold_validation():
    img = _gray_fov()
    with pytest.raises(ValidationError):
        extract_artifact_mask(img, tau_high=0.2, tau_low=0.5)
    with pytest.raises(ValidationError):
        extract_artifact_mask(img, open_radius=-1)


@given(st.floats(0.3, 0.99), st.floats(0.3, 0.99), st.integers(0, 1000))
def test_detection_monotone_in_tau_high(a, b, seed):
    lo, hi = sorted((a, b))
    img = np.random.default_rng(seed).uniform(0, 1, (24, 24, 3))
    fov = np.ones((24, 24), dtype=bool)
    assert np.all(detect_exposure(img, hi, 0.05, fov) <= detect_exposure(img, lo, 0.05, fov))


def test_constant_image_texture_is_zero():
    m = np.zeros((16, 16), dtype=np.uint8)
    m[4:9, 5:12] = 1
    tex = extract_texture(np.full((16, 16, 3), 0.4), m, blur_sigma=2.0)
    assert np.all(tex.image == 0)
    np.testing.assert_array_equal(tex.support, m)


def test_bright_blob_texture_matches_direct_oracle():
    n = 32
    img = np.full((n, n, 1), 0.1)
    blob = _circle(n, 15, 15, 4)
    img[blob] = 0.9
    m = _circle(n, 15, 15, 6).astype(np.uint8)
    tex = extract_texture(img, m, blur_sigma=12.0)
    hp = np.clip(img[..., 0] - ndimage.gaussian_filter(img[..., 0], 12.0, mode="nearest"), 0, None)
    vals = hp[m.astype(bool)]
    ref = np.where(m.astype(bool), (hp - vals.min()) / (vals.max() - vals.min()), 0)
    np.testing.assert_allclose(tex.image[..., 0], ref, atol=1e-6)
    # roughly the blob shape
    assert dice(tex.image[..., 0] > 0.5, blob) > 0.8


def test_texture_support_matches_mask_and_empty_rejected():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (20, 20, 3))
    m = (rng.uniform(size=(20, 20)) > 0.7).astype(np.uint8)
    tex = extract_texture(img, m)
    assert np.all(tex.image[m == 0] == 0)
    with pytest.raises(ValidationError):
        extract_texture(img, np.zeros((20, 20)))


def _texture(n, value, support):
    img = np.zeros((n, n, 3), dtype=np.float32)
    img[support] = value
    return ArtifactTexture(image=img, support=support.astype(np.uint8))


def test_blend_identities():
    clean = make_dataset(1, 0)[0].image
    n = clean.shape[0]
    m = _circle(n, 30, 30, 4)
    tex = _texture(n, 0.95, m)
    out, mt = blend_artifact(clean, tex, m, 0.0, (30, 30), (30, 30))
    np.testing.assert_array_equal(out, clean)
    out, _ = blend_artifact(clean, tex, np.zeros_like(m), 0.7, (30, 30), (30, 30))
    np.testing.assert_array_equal(out, clean)
    fov = detect_fov(clean).astype(bool)
    full = _texture(n, 0.33, fov)
    out, _ = blend_artifact(clean, full, fov, 1.0, (0, 0), (0, 0))
    np.testing.assert_allclose(out[fov], 0.33, atol=1e-7)


@given(st.integers(-6, 6), st.integers(-6, 6), st.floats(0.0, 1.0))
def test_blend_outside_mask_is_exact(dy, dx, alpha):
    clean = make_dataset(1, 2)[0].image
    n = clean.shape[0]
    m = _circle(n, 32, 32, 5)
    tex = _texture(n, 0.9, m)
    out, mt = blend_artifact(clean, tex, m, alpha, (32, 32), (32 + dy, 32 + dx))
    outside = ~mt.astype(bool)
    assert np.array_equal(out[outside], clean[outside])
    assert mt.sum() == m.sum()


def test_blend_placement_error():
    clean = make_dataset(1, 0)[0].image
    n = clean.shape[0]
    m = _circle(n, 32, 32, 5)
    with pytest.raises(PlacementError):
        blend_artifact(clean, _texture(n, 0.9, m), m, 0.5, (32, 32), (32, 62))  # off frame
    with pytest.raises(PlacementError):
        blend_artifact(clean, _texture(n, 0.9, m), m, 0.5, (32, 32), (32, 57))  # outside FOV


@given(st.integers(0, 10_000))
def test_round_trip_mask_recovery(seed):
    rng = np.random.default_rng(seed)
    clean = make_dataset(1, seed % 50)[0].image
    n = clean.shape[0]
    fov = detect_fov(clean).astype(bool)
    m = np.zeros((n, n), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(18, 46, 2)
        m |= _circle(n, cy, cx, rng.uniform(3, 7))
    m &= ndimage.binary_erosion(fov, iterations=2)
    if m.sum() < 10:
        return
    tex = _texture(n, 1.0, m)
    art, mt = blend_artifact(clean, tex, m, 1.0, (0, 0), (0, 0))
    # The dilation margin deliberately over-covers; overlap is measured without it,
    # and the default margin must then contain the whole injected region.
    assert dice(extract_artifact_mask(art, dilate_radius=0), mt) >= 0.8
    assert np.all(extract_artifact_mask(art)[mt.astype(bool)] == 1)


def test_synthetic_pair_is_deterministic_and_exact_outside():
    clean, source = make_dataset(1, 0)[0], make_dataset(1, 100000)[0]
    a1, m1 = make_synthetic_pair(clean, source, seed=9)
    a2, m2 = make_synthetic_pair(clean, source, seed=9)
    assert a1.tobytes() == a2.tobytes() and m1.tobytes() == m2.tobytes()
    assert m1.any()
    assert np.array_equal(a1[m1 == 0], clean.image[m1 == 0])


def test_disk_element():
    assert disk(1).sum() == 5
    assert disk(2).sum() == 13
