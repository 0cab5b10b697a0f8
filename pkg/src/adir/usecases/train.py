from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..checkpoint import checkpoint_digest, save_checkpoint
from ..config import RunConfig, config_fingerprint
from ..denoiser import train_prior
from ..use_case import UseCase
from .common import load_training_images, write_loss_csv


@dataclass
class TrainInput:
    config: RunConfig
    checkpoint: Path
    data_dir: Optional[Path] = None
    progress: bool = False


@dataclass
class TrainOutput:
    checkpoint: Path
    loss_csv: Path
    digest: str
    loss_curve: list[float] = field(default_factory=list)


class TrainPrior(UseCase[TrainInput, TrainOutput]):
    name = "train"

    def perform(self, input: TrainInput) -> TrainOutput:
        cfg = input.config
        if input.data_dir is None:
            cfg.require_paths("train_dir")
        data_dir = input.data_dir or cfg.train_dir
        images = load_training_images(data_dir, cfg, self.logger)
        sched = cfg.schedule.build()
        result = train_prior(
            images,
            cfg.train,
            sched,
            arch=cfg.model,
            logger=self.logger,
            progress=input.progress,
        )
        params = result.params
        params.provenance = {
            "config_fingerprint": config_fingerprint(cfg),
            "train": cfg.train.model_dump(mode="json"),
            "images": len(images),
        }
        save_checkpoint(params, input.checkpoint, sched)
        loss_csv = write_loss_csv(input.checkpoint.with_suffix(".loss.csv"), result.loss_curve)
        digest = checkpoint_digest(input.checkpoint)
        self.logger.info("saved checkpoint", path=str(input.checkpoint), sha256=digest[:12])
        return TrainOutput(
            checkpoint=input.checkpoint,
            loss_csv=loss_csv,
            digest=digest,
            loss_curve=result.loss_curve,
        )
