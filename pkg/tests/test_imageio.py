from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fundus_dae.errors import IngestionError
from fundus_dae.imageio import decode_f32, encode_f32, read_image, read_mask, read_png, write_image, write_mask, write_png


@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]))))
def test_f32_round_trip_is_exact(img):
    back = decode_f32(encode_f32(img))
    assert back.shape == img.shape
    assert back.tobytes() == img.tobytes()


def test_f32_header_layout():
    data = encode_f32(np.zeros((2, 5, 3), np.float32))
    assert len(data) == 16 + 4 * 30
    assert data[:3] == b"F32" and data[3] == 1
    assert struct.unpack_from("<III", data, 4) == (2, 5, 3)


def test_f32_rejects_bad_input():
    data = encode_f32(np.zeros((2, 2, 1), np.float32))
    with pytest.raises(IngestionError):
        decode_f32(data[:10])
    with pytest.raises(IngestionError):
        decode_f32(b"XYZ" + data[3:])
    with pytest.raises(IngestionError):
        decode_f32(data + b"\0")


def test_png_and_mask_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(0, 1, (6, 7, 3)).astype(np.float32)
    write_png(tmp_path / "a.png", img)
    back = read_png(tmp_path / "a.png")
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7
    m = np.random.default_rng(1).uniform(size=(6, 7)) > 0.5
    write_mask(tmp_path / "m.png", m)
    assert np.array_equal(read_mask(tmp_path / "m.png"), m.astype(np.uint8))
    write_image(tmp_path / "both", img)
    assert read_image(tmp_path / "both.f32").tobytes() == img.tobytes()
    assert (tmp_path / "both.png").exists()


def test_unreadable_files(tmp_path):
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(IngestionError):
        read_png(tmp_path / "junk.png")
    with pytest.raises(IngestionError):
        read_mask(tmp_path / "junk.png")
    with pytest.raises(IngestionError):
        read_image(tmp_path / "missing.f32")
