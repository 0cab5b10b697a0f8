from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from adir.config import Method
from adir.imageio import list_images
from adir.usecases import AdaptInput, ReconstructInput

from ..containers import container
from ..utils.results import read_config, unwrap_or_exit


def _inputs(path: Path) -> list[Path]:
    if path.is_dir():
        return [p for p in list_images(path) if ".observation." not in p.name]
    return [path]


def adapt_cmd(
    observation: Path,
    checkpoint: Path,
    out: Path,
    method: Method = Method.ADIR,
    config: Optional[Path] = None,
    progress: bool = True,
) -> None:
    cfg = read_config(config)
    result = container.adapt().execute(
        AdaptInput(
            config=cfg,
            observation=observation,
            checkpoint=checkpoint,
            out_checkpoint=out,
            method=method,
            progress=progress,
        )
    )
    output = unwrap_or_exit(result)
    typer.echo(
        f"adapted checkpoint {output.checkpoint} "
        f"({len(output.loss_curve)} iterations, {output.wall_time:.1f}s)"
    )


def reconstruct_cmd(
    checkpoint: Path,
    observation: Optional[Path] = None,
    truth: Optional[Path] = None,
    method: Optional[Method] = None,
    out_dir: Optional[Path] = None,
    config: Optional[Path] = None,
    progress: bool = True,
) -> None:
    """
    Reconstruct one image, or every image of a directory. With --truth the
    clean image is degraded on the fly and the observation is written too.
    """
    cfg = read_config(config)
    chosen = method or cfg.method
    target = out_dir or cfg.resolve_output(container.settings(), "reconstruct")
    source = truth if truth is not None else observation
    if source is None or (truth is not None and observation is not None):
        typer.secho("give exactly one of --observation or --truth", fg=typer.colors.RED, err=True)
        raise typer.Exit(2)

    use_case = container.reconstruct()
    for path in _inputs(source):
        inp = ReconstructInput(
            config=cfg,
            checkpoint=checkpoint,
            out_dir=target,
            method=chosen,
            observation=None if truth is not None else path,
            truth=path if truth is not None else None,
            progress=progress,
        )
        output = unwrap_or_exit(use_case.execute(inp))
        typer.echo(f"{output.image_path}  seed={output.seed}")
