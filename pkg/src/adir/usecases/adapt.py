from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..adaptation import AdaptResult, adapt_on_neighbors, adapt_on_observation
from ..checkpoint import load_checkpoint, save_checkpoint
from ..config import Method, RunConfig
from ..denoiser import DenoiserParams
from ..diffusion import DiffusionSchedule
from ..imageio import read_image
from ..logging import SystemClock, get_logger
from ..operators import Observation
from ..ports import ClockPort, EncoderPort, LoggerPort
from ..retrieval import CoarseStatsEncoder, Neighbor, knn, load_neighbors
from ..use_case import UseCase
from .common import (
    check_schedule_matches,
    image_seed,
    observation_from_image,
    write_loss_csv,
)
from .retrieve import open_index, write_manifest


@dataclass
class Adapted:
    params: DenoiserParams
    result: Optional[AdaptResult] = None
    neighbors: list[Neighbor] = field(default_factory=list)


def adapt_for_method(
    method: Method,
    cfg: RunConfig,
    params: DenoiserParams,
    obs: Observation,
    sched: DiffusionSchedule,
    encoder: EncoderPort,
    clock: ClockPort,
    logger: LoggerPort,
    progress: bool = False,
) -> Adapted:
    """Baseline keeps the weights; IA adapts on y; ADIR retrieves then adapts."""
    if method is Method.BASELINE:
        return Adapted(params=params)
    acfg = cfg.adapt_for(method)
    if method is Method.IA:
        result = adapt_on_observation(params, obs, sched, acfg, clock=clock, logger=logger, progress=progress)
        return Adapted(params=result.params_adapted, result=result)

    index = open_index(cfg)
    neighbors = knn(obs.y, index, cfg.retrieval.K, encoder=encoder)
    refs = [n.path for n in neighbors]
    images = load_neighbors(index, refs)
    _, h, w = obs.operator.input_shape
    result = adapt_on_neighbors(
        params, images, sched, acfg, (h, w), refs=refs, clock=clock, logger=logger, progress=progress
    )
    return Adapted(params=result.params_adapted, result=result, neighbors=neighbors)


@dataclass
class AdaptInput:
    config: RunConfig
    observation: Path
    checkpoint: Path
    out_checkpoint: Path
    method: Method = Method.ADIR
    progress: bool = False


@dataclass
class AdaptOutput:
    checkpoint: Path
    loss_csv: Optional[Path]
    loss_curve: list[float]
    neighbors: list[Neighbor]
    wall_time: float


class AdaptDenoiser(UseCase[AdaptInput, AdaptOutput]):
    """Fine-tune a checkpoint on an observation or on its retrieved neighbours."""

    name = "adapt"

    def __init__(
        self,
        encoder: Optional[EncoderPort] = None,
        clock: Optional[ClockPort] = None,
        logger: Optional[LoggerPort] = None,
    ) -> None:
        super().__init__(logger or get_logger(f"adir.{self.name}"))
        self.encoder = encoder or CoarseStatsEncoder()
        self.clock = clock or SystemClock()

    def perform(self, input: AdaptInput) -> AdaptOutput:
        cfg = input.config
        sched = cfg.schedule.build()
        params = load_checkpoint(input.checkpoint)
        check_schedule_matches(params, sched, self.logger)
        y = read_image(input.observation)
        obs = observation_from_image(cfg, y, image_seed(cfg.seed, input.observation.name))
        adapted = adapt_for_method(
            input.method, cfg, params, obs, sched, self.encoder, self.clock, self.logger, input.progress
        )
        save_checkpoint(adapted.params, input.out_checkpoint, sched)
        curve = adapted.result.loss_curve if adapted.result else []
        loss_csv = write_loss_csv(input.out_checkpoint.with_suffix(".loss.csv"), curve) if adapted.result else None
        if adapted.neighbors:
            write_manifest(input.out_checkpoint.with_suffix(".neighbors.csv"), adapted.neighbors)
        return AdaptOutput(
            checkpoint=input.out_checkpoint,
            loss_csv=loss_csv,
            loss_curve=curve,
            neighbors=adapted.neighbors,
            wall_time=adapted.result.wall_time if adapted.result else 0.0,
        )
