"""
Pytest fixtures for the adir test kit.

Usage (conftest.py):
    from adir.testkit.fixtures import *  # noqa: F401,F403

Fixtures:
- capturing_logger: CapturingLogger
- fake_clock: FakeClock that advances 0.5 s per monotonic() read
- tiny_arch: ArchConfig of a one-block grayscale network
- tiny_model: DenoiserParams for tiny_arch (float64, non-zero output layer)
- small_schedule: 20-step linear schedule
- texture_images: six 16×16 grayscale textures (two clusters)
- texture_dir: the same textures written as PNGs
"""

from __future__ import annotations

from pathlib import Path

import pytest
from torch import Tensor

from adir.denoiser import ArchConfig, DenoiserParams
from adir.diffusion import DiffusionSchedule
from adir.testkit import (
    CapturingLogger,
    FakeClock,
    small_schedule as _small_schedule,
    texture_images as _texture_images,
    tiny_arch as _tiny_arch,
    tiny_params,
    write_textures,
)


@pytest.fixture
def capturing_logger() -> CapturingLogger:
    """Logger that records log entries for assertions."""
    return CapturingLogger()


@pytest.fixture
def fake_clock() -> FakeClock:
    return FakeClock(tick=0.5)


@pytest.fixture
def tiny_arch() -> ArchConfig:
    return _tiny_arch()


@pytest.fixture
def tiny_model() -> DenoiserParams:
    return tiny_params()


@pytest.fixture
def small_schedule() -> DiffusionSchedule:
    return _small_schedule()


@pytest.fixture
def texture_images() -> list[Tensor]:
    return _texture_images()


@pytest.fixture
def texture_dir(tmp_path: Path) -> Path:
    root = tmp_path / "textures"
    write_textures(root)
    return root


__all__ = [
    "capturing_logger",
    "fake_clock",
    "tiny_arch",
    "tiny_model",
    "small_schedule",
    "texture_images",
    "texture_dir",
]
