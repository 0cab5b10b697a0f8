"""
Deterministic synthetic corpora.

`textures` are sums of oriented gratings repeated over several octaves with
geometric amplitude decay, so the same motif recurs across scales. Images
are grouped into clusters that share orientation, base frequency, offset,
contrast and tint; only phases and a small orientation jitter vary inside a
cluster. `gaussians` are draws from a GaussianWorld.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor

from .oracle import GaussianWorld, sample_prior


class TextureSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    size: int = Field(32, ge=8)
    channels: Literal[1, 3] = 1
    clusters: int = Field(4, ge=1)
    octaves: int = Field(3, ge=1)
    persistence: float = Field(0.6, gt=0, le=1)
    jitter: float = Field(0.15, ge=0)


@dataclass(frozen=True)
class TextureCluster:
    orientation: float
    cross: float
    frequency: float
    offset: float
    contrast: float
    tint: tuple[float, float, float]


def make_clusters(count: int, gen: torch.Generator) -> list[TextureCluster]:
    def u(lo: float, hi: float) -> float:
        return lo + (hi - lo) * float(torch.rand((), generator=gen, dtype=torch.float64))

    out = []
    for k in range(count):
        base = math.pi * (k + u(0.0, 0.5)) / max(count, 1)
        out.append(
            TextureCluster(
                orientation=base,
                cross=u(0.0, 0.8),
                frequency=u(1.5, 4.0),
                offset=u(0.3, 0.7),
                contrast=u(0.12, 0.25),
                tint=(u(0.8, 1.2), u(0.8, 1.2), u(0.8, 1.2)),
            )
        )
    return out


def render_texture(cluster: TextureCluster, spec: TextureSpec, gen: torch.Generator) -> Tensor:
    n = spec.size
    coords = (torch.arange(n, dtype=torch.float64) + 0.5) / n
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    theta = cluster.orientation + spec.jitter * float(torch.randn((), generator=gen, dtype=torch.float64))
    pattern = torch.zeros((n, n), dtype=torch.float64)
    for octave in range(spec.octaves):
        freq = 2 * math.pi * cluster.frequency * 2**octave
        amp = spec.persistence**octave
        for angle, weight in ((theta, 1.0), (theta + math.pi / 2, cluster.cross)):
            phase = 2 * math.pi * float(torch.rand((), generator=gen, dtype=torch.float64))
            proj = xx * math.cos(angle) + yy * math.sin(angle)
            pattern = pattern + amp * weight * torch.sin(freq * proj + phase)
    base = (cluster.offset + cluster.contrast * pattern).clamp(0.0, 1.0)
    if spec.channels == 1:
        return base[None]
    tint = torch.tensor(cluster.tint[: spec.channels], dtype=torch.float64)
    return (base[None] * tint[:, None, None]).clamp(0.0, 1.0)


def generate_textures(count: int, spec: TextureSpec, seed: int = 0) -> list[tuple[Tensor, int]]:
    """`count` textures with their cluster ids, cycling through the clusters."""
    gen = torch.Generator().manual_seed(int(seed))
    clusters = make_clusters(spec.clusters, gen)
    out = []
    for i in range(count):
        cid = i % spec.clusters
        out.append((render_texture(clusters[cid], spec, gen), cid))
    return out


def generate_gaussians(world: GaussianWorld, count: int, seed: int = 0) -> Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return sample_prior(world, count, gen)
