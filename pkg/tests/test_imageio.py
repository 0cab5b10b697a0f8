from __future__ import annotations

import numpy as np
import pytest
import torch
from PIL import Image

from adir.errors import FormatError, ShapeError
from adir.imageio import (
    list_images,
    load_array_text,
    quantize,
    read_image,
    read_mask,
    save_array_text,
    to_channels,
    write_image,
)


def test_grayscale_round_trip_is_the_quantised_image(tmp_path):
    img = torch.rand((1, 5, 7), generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    path = write_image(img, tmp_path / "g.png")
    back = read_image(path)
    assert back.shape == (1, 5, 7)
    assert back.dtype == torch.float64
    assert torch.equal(back, quantize(img))


def test_rgb_and_pnm(tmp_path):
    img = torch.rand((3, 4, 4), generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    write_image(img, tmp_path / "c.ppm")
    assert torch.equal(read_image(tmp_path / "c.ppm"), quantize(img))


def test_sixteen_bit_grayscale(tmp_path):
    arr = np.array([[0, 65535], [32768, 1000]], dtype=np.uint16)
    Image.fromarray(arr).save(tmp_path / "deep.png")
    img = read_image(tmp_path / "deep.png")
    assert img.shape == (1, 2, 2)
    assert float(img[0, 0, 1]) == pytest.approx(1.0)
    assert float(img[0, 1, 0]) == pytest.approx(32768 / 65535)


def test_values_are_clamped_on_write(tmp_path):
    img = torch.tensor([[[-0.5, 1.5]]], dtype=torch.float64)
    back = read_image(write_image(img, tmp_path / "clamp.png"))
    assert back.tolist() == [[[0.0, 1.0]]]


def test_undecodable_file(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"nope")
    with pytest.raises(FormatError):
        read_image(tmp_path / "bad.png")
    with pytest.raises(ShapeError):
        write_image(torch.zeros(2, 4, 4), tmp_path / "two.png")


def test_list_images_filters_and_sorts(tmp_path):
    for name in ("b.png", "a.PGM", "notes.txt", "c.ppm"):
        (tmp_path / name).write_bytes(b"")
    (tmp_path / "dir.png").mkdir()
    assert [p.name for p in list_images(tmp_path)] == ["a.PGM", "b.png", "c.ppm"]


def test_channel_conversion():
    gray = torch.rand(1, 3, 3, dtype=torch.float64)
    rgb = to_channels(gray, 3)
    assert rgb.shape == (3, 3, 3)
    assert torch.allclose(to_channels(rgb, 1), gray, atol=1e-15)
    assert to_channels(gray, 1) is gray
    with pytest.raises(ShapeError):
        to_channels(torch.zeros(2, 3, 3), 3)


def test_read_mask_thresholds_at_one_half(tmp_path):
    img = torch.tensor([[[0.0, 0.4], [0.6, 1.0]]], dtype=torch.float64)
    mask = read_mask(write_image(img, tmp_path / "m.png"))
    assert mask.tolist() == [[[0.0, 0.0], [1.0, 1.0]]]


def test_array_text_round_trip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(3, 4))
    path = save_array_text(arr, tmp_path / "arr.txt")
    assert np.array_equal(load_array_text(path), arr)


def test_array_text_comments_and_errors(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("# kernel\n2 2\n1 2 # first row\n3 4\n", encoding="utf-8")
    assert load_array_text(path).tolist() == [[1.0, 2.0], [3.0, 4.0]]
    path.write_text("2 2\n1 2 3\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_array_text(path)
    path.write_text("2 x\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_array_text(path)
    path.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_array_text(path)
    with pytest.raises(FormatError):
        load_array_text(tmp_path / "missing.txt")
