from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from torch import Tensor

from ..checkpoint import load_checkpoint
from ..config import Method, RunConfig
from ..denoiser import DenoiserParams
from ..errors import ParameterError
from ..imageio import read_image, write_image
from ..logging import SystemClock, get_logger
from ..ports import ClockPort, EncoderPort, LoggerPort
from ..retrieval import CoarseStatsEncoder, Neighbor
from ..sampler import SamplerTrace, reconstruct, write_trace_csv
from ..use_case import UseCase
from .adapt import adapt_for_method
from .common import (
    check_schedule_matches,
    image_seed,
    observation_from_image,
    observation_from_truth,
    write_loss_csv,
)
from .retrieve import write_manifest


@dataclass
class ReconstructInput:
    config: RunConfig
    checkpoint: Path
    out_dir: Path
    method: Method = Method.BASELINE
    observation: Optional[Path] = None
    truth: Optional[Path] = None
    progress: bool = False
    params: Optional[DenoiserParams] = None


@dataclass
class ReconstructOutput:
    image: Tensor
    image_path: Path
    trace: SamplerTrace
    trace_path: Path
    seed: int
    neighbors: list[Neighbor] = field(default_factory=list)
    observation_path: Optional[Path] = None


class ReconstructImage(UseCase[ReconstructInput, ReconstructOutput]):
    """
    baseline: guided sampling with the pretrained weights
    ia:       adapt on the observation, then sample
    adir:     retrieve K neighbours, adapt on them, then sample
    """

    name = "reconstruct"

    def __init__(
        self,
        encoder: Optional[EncoderPort] = None,
        clock: Optional[ClockPort] = None,
        logger: Optional[LoggerPort] = None,
    ) -> None:
        super().__init__(logger or get_logger(f"adir.{self.name}"))
        self.encoder = encoder or CoarseStatsEncoder()
        self.clock = clock or SystemClock()

    def validate(self, input: ReconstructInput) -> None:
        if (input.observation is None) == (input.truth is None):
            raise ParameterError("give exactly one of observation or truth")

    def perform(self, input: ReconstructInput) -> ReconstructOutput:
        cfg = input.config
        sched = cfg.schedule.build()
        params = input.params if input.params is not None else load_checkpoint(input.checkpoint)
        check_schedule_matches(params, sched, self.logger)

        source: Path = input.truth or input.observation  # type: ignore[assignment]
        stem = source.stem
        seed = image_seed(cfg.seed, source.name)
        observation_path = None
        if input.truth is not None:
            obs, _ = observation_from_truth(cfg, read_image(input.truth), seed)
            observation_path = write_image(obs.y, input.out_dir / f"{stem}.observation.png")
        else:
            obs = observation_from_image(cfg, read_image(input.observation), seed)

        adapted = adapt_for_method(
            input.method, cfg, params, obs, sched, self.encoder, self.clock, self.logger, input.progress
        )
        if adapted.result is not None:
            write_loss_csv(input.out_dir / f"{stem}.adapt.csv", adapted.result.loss_curve)
        if adapted.neighbors:
            write_manifest(input.out_dir / f"{stem}.neighbors.csv", adapted.neighbors)

        gcfg = cfg.guidance.model_copy(update={"seed": image_seed(cfg.guidance.seed, source.name)})
        x0, trace = reconstruct(obs, adapted.params, sched, gcfg, logger=self.logger, progress=input.progress)
        if x0.dim() == 4:
            # several chains: store their mean
            x0 = x0.mean(dim=0)
        image_path = write_image(x0, input.out_dir / f"{stem}.png")
        trace_path = input.out_dir / f"{stem}.trace.csv"
        write_trace_csv(trace, trace_path)
        self.logger.info(
            "reconstructed",
            image=stem,
            method=input.method.value,
            fidelity=trace.records[-1].fidelity if len(trace) else 0.0,
        )
        return ReconstructOutput(
            image=x0,
            image_path=image_path,
            trace=trace,
            trace_path=trace_path,
            seed=seed,
            neighbors=adapted.neighbors,
            observation_path=observation_path,
        )
