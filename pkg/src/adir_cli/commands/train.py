from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from adir.usecases import TrainInput

from ..containers import container
from ..utils.results import read_config, unwrap_or_exit


def train_cmd(
    out: Optional[Path] = None,
    data: Optional[Path] = None,
    config: Optional[Path] = None,
    progress: bool = True,
) -> None:
    cfg = read_config(config)
    checkpoint = out or cfg.resolve_output(container.settings(), "train") / "prior.ckpt"
    result = container.train().execute(
        TrainInput(config=cfg, checkpoint=checkpoint, data_dir=data, progress=progress)
    )
    output = unwrap_or_exit(result)
    final = output.loss_curve[-1] if output.loss_curve else float("nan")
    typer.echo(f"checkpoint {output.checkpoint} sha256={output.digest[:12]} final_loss={final:.5g}")
