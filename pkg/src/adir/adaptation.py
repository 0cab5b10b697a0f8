"""
Test-time adaptation of the denoiser.

Both sources fine-tune a private copy of the pretrained weights with the
training loss: either on the observation itself (upsampled to model
resolution when the operator changes size) or on random crops of retrieved
neighbour images. One diffusion step is shared by every item of a batch and
gradients are averaged over the batch.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Optional, Sequence

import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor

from .denoiser import DenoiserParams, fit
from .diffusion import DiffusionSchedule
from .errors import ParameterError, ShapeError
from .imageio import to_channels
from .logging import SystemClock
from .operators import Observation, bicubic_resize
from .ports import ClockPort, LoggerPort


class AdaptSource(str, Enum):
    OBSERVATION = "observation"
    NEIGHBORS = "neighbors"


class StartFrom(str, Enum):
    RAW = "raw"
    EMA = "ema"


class AdaptConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(400, ge=0)
    learning_rate: float = Field(1e-4, gt=0)
    ema_rate: float = Field(0.8, ge=0, lt=1)
    batch_size: int = Field(6, ge=1)
    crop_size: Optional[int] = Field(None, ge=1)
    source: AdaptSource = AdaptSource.NEIGHBORS
    start_from: StartFrom = StartFrom.RAW
    seed: int = 0
    log_every: int = Field(50, ge=1)


@dataclass(eq=False)
class AdaptResult:
    params_adapted: DenoiserParams
    loss_curve: list[float]
    wall_time: float


def _generator(seed: int | torch.Generator) -> torch.Generator:
    if isinstance(seed, torch.Generator):
        return seed
    return torch.Generator().manual_seed(int(seed))


def random_crop(image: Tensor, crop_size: int, seed: int | torch.Generator) -> Tensor:
    h, w = int(image.shape[-2]), int(image.shape[-1])
    if crop_size < 1 or crop_size > min(h, w):
        raise ParameterError("crop does not fit the image", {"crop_size": crop_size, "height": h, "width": w})
    gen = _generator(seed)
    top = int(torch.randint(0, h - crop_size + 1, (1,), generator=gen))
    left = int(torch.randint(0, w - crop_size + 1, (1,), generator=gen))
    return image[..., top: top + crop_size, left: left + crop_size]


def _at_least(image: Tensor, height: int, width: int) -> Tensor:
    h, w = int(image.shape[-2]), int(image.shape[-1])
    if h >= height and w >= width:
        return image
    scale = max(height / h, width / w)
    return bicubic_resize(image, (math.ceil(h * scale), math.ceil(w * scale)))


def neighbors_digest(refs: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(sorted(refs)).encode("utf-8")).hexdigest()


def _adapt(
    params: DenoiserParams,
    pool: Sequence[Tensor],
    sched: DiffusionSchedule,
    cfg: AdaptConfig,
    crop_size: int,
    provenance: dict,
    clock: ClockPort,
    logger: Optional[LoggerPort],
    progress: bool,
) -> AdaptResult:
    started = clock.monotonic()
    if cfg.iterations == 0:
        adapted = params.copy()
        adapted.provenance = {**adapted.provenance, "adaptation": provenance}
        return AdaptResult(adapted, [], clock.monotonic() - started)

    start = params.copy()
    if cfg.start_from is StartFrom.EMA:
        start.layers = {k: v.clone() for k, v in start.ema_shadow.items()}
    start = replace(start, ema_rate=cfg.ema_rate)
    images = [to_channels(img, params.arch.channels).to(params.dtype) for img in pool]
    gen = torch.Generator().manual_seed(int(cfg.seed))

    def batches() -> Iterator[tuple[Tensor, Tensor, Tensor]]:
        while True:
            t = int(torch.randint(1, sched.T + 1, (1,), generator=gen))
            crops = []
            for _ in range(cfg.batch_size):
                k = int(torch.randint(0, len(images), (1,), generator=gen))
                crops.append(random_crop(images[k], crop_size, gen))
            x0 = torch.stack(crops)
            eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
            yield x0, torch.full((cfg.batch_size,), t, dtype=torch.int64), eps

    if logger is not None:
        logger.info(
            "adapting denoiser",
            source=cfg.source.value,
            images=len(images),
            iterations=cfg.iterations,
            crop_size=crop_size,
        )
    result = fit(
        start,
        batches(),
        sched,
        cfg.learning_rate,
        cfg.iterations,
        logger=logger,
        log_every=cfg.log_every,
        progress=progress,
        desc="adapt",
    )
    adapted = result.params
    adapted.provenance = {**adapted.provenance, "adaptation": provenance}
    return AdaptResult(adapted, result.loss_curve, clock.monotonic() - started)


def adapt_on_observation(
    params: DenoiserParams,
    obs: Observation,
    sched: DiffusionSchedule,
    cfg: AdaptConfig,
    clock: Optional[ClockPort] = None,
    logger: Optional[LoggerPort] = None,
    progress: bool = False,
) -> AdaptResult:
    """Fine-tune on y itself, bicubically upsampled to the operator's input size."""
    if cfg.source is not AdaptSource.OBSERVATION:
        raise ParameterError("config source must be 'observation'", {"source": cfg.source.value})
    _, h, w = obs.operator.input_shape
    target = obs.y
    if tuple(target.shape[-2:]) != (h, w):
        target = bicubic_resize(target, (h, w))
    crop = cfg.crop_size or min(h, w)
    if crop > min(h, w):
        raise ParameterError("crop larger than the model resolution", {"crop_size": crop})
    provenance = {"source": cfg.source.value, "config": cfg.model_dump(mode="json")}
    return _adapt(params, [target], sched, cfg, crop, provenance, clock or SystemClock(), logger, progress)


def adapt_on_neighbors(
    params: DenoiserParams,
    neighbors: Sequence[Tensor],
    sched: DiffusionSchedule,
    cfg: AdaptConfig,
    resolution: tuple[int, int],
    refs: Sequence[str] = (),
    clock: Optional[ClockPort] = None,
    logger: Optional[LoggerPort] = None,
    progress: bool = False,
) -> AdaptResult:
    """Fine-tune on random crops of retrieved images; `resolution` is the model's (H, W)."""
    if len(neighbors) == 0:
        raise ParameterError("neighbor list is empty")
    if cfg.source is not AdaptSource.NEIGHBORS:
        raise ParameterError("config source must be 'neighbors'", {"source": cfg.source.value})
    h, w = resolution
    crop = cfg.crop_size or min(h, w)
    if crop > min(h, w):
        raise ParameterError("crop larger than the model resolution", {"crop_size": crop})
    pool = []
    for img in neighbors:
        if img.dim() != 3:
            raise ShapeError("neighbors must be (C, H, W) images", {"shape": list(img.shape)})
        pool.append(_at_least(img, h, w))
    provenance = {
        "source": cfg.source.value,
        "neighbors": len(pool),
        "neighbors_sha256": neighbors_digest(refs),
        "config": cfg.model_dump(mode="json"),
    }
    return _adapt(params, pool, sched, cfg, crop, provenance, clock or SystemClock(), logger, progress)
