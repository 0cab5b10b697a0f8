from __future__ import annotations

import itertools

import pytest
import torch

from adir.oracle import random_world
from adir.retrieval import CoarseStatsEncoder, spherical_distance
from adir.synthetic import TextureSpec, generate_gaussians, generate_textures
from adir.testkit import small_schedule


def test_textures_are_deterministic():
    spec = TextureSpec(size=16, clusters=3)
    a = generate_textures(5, spec, seed=2)
    b = generate_textures(5, spec, seed=2)
    c = generate_textures(5, spec, seed=3)
    assert all(torch.equal(x, y) for (x, _), (y, _) in zip(a, b))
    assert not torch.equal(a[0][0], c[0][0])


def test_textures_cycle_through_clusters():
    out = generate_textures(7, TextureSpec(size=16, clusters=3), seed=0)
    assert [cid for _, cid in out] == [0, 1, 2, 0, 1, 2, 0]


@pytest.mark.parametrize("channels", [1, 3])
def test_texture_shape_and_range(channels):
    for img, _ in generate_textures(4, TextureSpec(size=24, channels=channels), seed=1):
        assert img.shape == (channels, 24, 24)
        assert img.dtype == torch.float64
        assert float(img.min()) >= 0.0 and float(img.max()) <= 1.0
        assert float(img.std()) > 0.0


def test_clusters_are_closer_inside_than_across():
    out = generate_textures(12, TextureSpec(size=32, clusters=2), seed=0)
    enc = CoarseStatsEncoder()
    emb = [(enc.embed(img), cid) for img, cid in out]
    inside, across = [], []
    for (a, ca), (b, cb) in itertools.combinations(emb, 2):
        (inside if ca == cb else across).append(spherical_distance(a, b))
    assert sum(inside) / len(inside) < sum(across) / len(across)


def test_spec_validation():
    with pytest.raises(ValueError):
        TextureSpec(size=4)
    with pytest.raises(ValueError):
        TextureSpec(channels=2)


def test_gaussian_draws():
    world = random_world(6, small_schedule(), seed=0)
    a = generate_gaussians(world, 10, seed=4)
    assert a.shape == (10,) + world.shape
    assert torch.equal(a, generate_gaussians(world, 10, seed=4))
