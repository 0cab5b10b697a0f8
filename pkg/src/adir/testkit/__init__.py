"""
Deterministic fakes and tiny model factories for tests.

Everything here is small enough that a full train/adapt/sample round trip
finishes in well under a second on a CPU.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import torch
from torch import Tensor

from ..config import RunConfig, build_config, parse_config_text
from ..denoiser import ArchConfig, DenoiserParams, init_params
from ..diffusion import DiffusionSchedule, make_schedule
from ..imageio import write_image
from ..ports import ClockPort, LoggerPort
from ..synthetic import TextureSpec, generate_textures


@dataclass
class FakeClock(ClockPort):
    """
    Deterministic clock for tests.
    Optionally advances by `tick` seconds on every monotonic() read.
    """

    mono: float = 0.0
    tick: float = 0.0

    def monotonic(self) -> float:
        value = self.mono
        self.mono += self.tick
        return value

    def advance(self, seconds: float) -> None:
        self.mono += seconds


class CapturingLogger(LoggerPort):
    """
    Test logger that captures log records for assertions.
    """

    def __init__(self) -> None:
        self.records: List[Dict[str, Any]] = []

    def _push(self, level: str, msg: str, **fields: Any) -> None:
        self.records.append({"level": level, "msg": msg, **fields})

    def debug(self, msg: str, **fields: Any) -> None:
        self._push("debug", msg, **fields)

    def info(self, msg: str, **fields: Any) -> None:
        self._push("info", msg, **fields)

    def warning(self, msg: str, **fields: Any) -> None:
        self._push("warning", msg, **fields)

    def error(self, msg: str, **fields: Any) -> None:
        self._push("error", msg, **fields)

    def messages(self, level: Optional[str] = None) -> List[str]:
        return [r["msg"] for r in self.records if level is None or r["level"] == level]


def tiny_arch(channels: int = 1) -> ArchConfig:
    return ArchConfig(channels=channels, hidden=4, blocks=1, embed_dim=8)


def tiny_params(
    channels: int = 1, seed: int = 0, dtype: torch.dtype = torch.float64
) -> DenoiserParams:
    """
    Tiny network with a perturbed (non-zero) output layer, so predictions
    and their gradients are not trivially zero.
    """
    params = init_params(tiny_arch(channels), seed=seed, dtype=dtype)
    gen = torch.Generator().manual_seed(seed + 7)
    for name in ("out.weight", "out.bias"):
        w = params.layers[name]
        w = 0.1 * torch.randn(w.shape, generator=gen, dtype=torch.float64).to(dtype)
        params.layers[name] = w
        params.ema_shadow[name] = w.clone()
    return params


def small_schedule(T: int = 20) -> DiffusionSchedule:
    """Short linear chain; ᾱ_T ≈ 0.01 at the default T = 20."""
    return make_schedule(T, "linear", 2e-3, 0.4)


def texture_images(
    count: int = 6, size: int = 16, channels: int = 1, seed: int = 0
) -> List[Tensor]:
    spec = TextureSpec(size=size, channels=channels, clusters=2)
    return [img for img, _ in generate_textures(count, spec, seed=seed)]


def write_textures(directory: Path, count: int = 6, size: int = 16, seed: int = 0) -> List[Path]:
    """Write `count` grayscale textures as PNGs and return their paths."""
    directory.mkdir(parents=True, exist_ok=True)
    return [
        write_image(img, directory / f"tex_{i:05d}.png")
        for i, img in enumerate(texture_images(count, size, seed=seed))
    ]


def tiny_config_text(root: Path) -> str:
    """Flat config for a seconds-long end-to-end run rooted at `root`."""
    return "\n".join(
        [
            "task = sr2",
            f'corpus_dir = "{(root / "corpus").as_posix()}"',
            f'train_dir = "{(root / "train").as_posix()}"',
            f'index_path = "{(root / "index.adx").as_posix()}"',
            "schedule.T = 20",
            "schedule.beta_start = 0.002",
            "schedule.beta_end = 0.4",
            "model.hidden = 4",
            "model.blocks = 1",
            "model.embed_dim = 8",
            "train.iterations = 3",
            "train.batch_size = 2",
            "guidance.s = 1.0",
            "guidance.steps = 5",
            "adapt.iterations = 2",
            "adapt.batch_size = 2",
            "retrieval.K = 3",
            "data.count = 6",
            "data.size = 16",
            "data.clusters = 2",
            "oracle.n = 4",
            "oracle.m = 2",
            "oracle.T = 20",
            "oracle.samples = 20",
            "oracle.truths = 2",
            "oracle.chains = 100",
            "oracle.scales = [0.5]",
            "eval.workers = 2",
        ]
    ) + "\n"


def tiny_config(root: Path) -> RunConfig:
    return build_config(parse_config_text(tiny_config_text(root)))


__all__ = [
    "CapturingLogger",
    "FakeClock",
    "small_schedule",
    "texture_images",
    "tiny_arch",
    "tiny_config",
    "tiny_config_text",
    "tiny_params",
    "write_textures",
]
