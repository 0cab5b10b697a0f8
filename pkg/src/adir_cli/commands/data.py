from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from adir.usecases import GenDataInput

from ..containers import container
from ..utils.results import read_config, unwrap_or_exit


def gen_data_cmd(
    out: Path,
    kind: Optional[str] = None,
    count: Optional[int] = None,
    seed: Optional[int] = None,
    config: Optional[Path] = None,
) -> None:
    cfg = read_config(config)
    if kind is not None and kind not in ("textures", "gaussians"):
        typer.secho(f"unknown kind '{kind}' (textures|gaussians)", fg=typer.colors.RED, err=True)
        raise typer.Exit(2)
    result = container.gen_data().execute(
        GenDataInput(config=cfg, out_dir=out, kind=kind, count=count, seed=seed)  # type: ignore[arg-type]
    )
    output = unwrap_or_exit(result)
    typer.echo(f"{len(output.files)} file(s) in {output.out_dir}")
