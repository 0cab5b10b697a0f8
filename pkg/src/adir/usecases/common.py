"""Helpers shared by the workflow use cases."""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import torch
from torch import Tensor

from ..config import RunConfig
from ..denoiser import DenoiserParams
from ..diffusion import DiffusionSchedule
from ..errors import ShapeError
from ..imageio import list_images, load_array_text, read_image, read_mask, to_channels
from ..operators import LinearOperator, Observation, bicubic_resize, degrade, operator_for_task
from ..ports import LoggerPort
from ..types import Shape


def image_seed(base: int, name: str) -> int:
    """Per-image seed derived from the run seed and the file name."""
    digest = hashlib.sha256(f"{base}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def model_shape(cfg: RunConfig) -> Shape:
    return (cfg.model.channels, cfg.data.size, cfg.data.size)


def task_operator(cfg: RunConfig, shape: Shape) -> tuple[LinearOperator, float]:
    mask = read_mask(cfg.mask_path) if cfg.mask_path is not None else None
    kernel = torch.from_numpy(load_array_text(cfg.kernel_path)) if cfg.kernel_path is not None else None
    op, sigma = operator_for_task(cfg.task, shape, mask=mask, kernel=kernel)
    return op, (cfg.sigma if cfg.sigma is not None else sigma)


def observation_from_truth(cfg: RunConfig, truth: Tensor, seed: int) -> tuple[Observation, Tensor]:
    shape = model_shape(cfg)
    x = to_channels(truth, shape[0])
    if tuple(x.shape[-2:]) != shape[1:]:
        x = bicubic_resize(x, shape[1:])
    op, sigma = task_operator(cfg, shape)
    return degrade(x, op, sigma, seed), x


def observation_from_image(cfg: RunConfig, y: Tensor, seed: int) -> Observation:
    shape = model_shape(cfg)
    op, sigma = task_operator(cfg, shape)
    y = to_channels(y, shape[0])
    if tuple(y.shape) != tuple(op.output_shape):
        raise ShapeError(
            "observation does not match the task operator",
            {"observation": list(y.shape), "expected": list(op.output_shape), "task": cfg.task.value},
        )
    return Observation(y=y, operator=op, sigma=sigma, seed=seed)


def load_training_images(directory: Path, cfg: RunConfig, logger: Optional[LoggerPort] = None) -> list[Tensor]:
    shape = model_shape(cfg)
    images = []
    for path in list_images(directory):
        img = to_channels(read_image(path), shape[0])
        if tuple(img.shape[-2:]) != shape[1:]:
            img = bicubic_resize(img, shape[1:])
        images.append(img)
    if logger is not None:
        logger.info("loaded images", directory=str(directory), count=len(images))
    return images


def check_schedule_matches(params: DenoiserParams, sched: DiffusionSchedule, logger: LoggerPort) -> None:
    stored = params.schedule
    if not stored:
        return
    current = sched.summary()
    if stored["T"] != current["T"] or not all(
        math.isclose(stored[k], current[k], rel_tol=1e-9) for k in ("beta_start", "beta_end")
    ):
        logger.warning("checkpoint was trained with a different schedule", stored=stored, configured=current)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def write_loss_csv(path: Path, curve: Sequence[float]) -> Path:
    return write_csv(path, ["iteration", "loss"], ((i + 1, float(v)) for i, v in enumerate(curve)))
