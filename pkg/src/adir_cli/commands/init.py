from __future__ import annotations

import json
from pathlib import Path

import typer

from adir.config import RunConfig

from ..utils.fs import ensure_dirs, write_file
from ..utils.templating import render_text

CONFIG_NAME = "adir.cfg"


def config_context(cfg: RunConfig) -> dict:
    top, sections = [], []
    for key, value in cfg.model_dump(mode="json").items():
        if isinstance(value, dict):
            items = [(k, json.dumps(v)) for k, v in value.items() if v is not None]
            sections.append((key, items))
        else:
            top.append((key, None if value is None else json.dumps(value)))
    return {"top": top, "sections": sections}


def init_cmd(directory: Path, force: bool = False) -> Path:
    """
    Scaffold an experiment directory: a commented default config and the
    data/ and runs/ folders it points at.
    """
    directory = Path(directory)
    ensure_dirs(directory, "data/corpus", "data/train", "runs")
    target = directory / CONFIG_NAME
    text = render_text("config.txt.j2", config_context(RunConfig()))
    if not write_file(target, text, exist_ok=True, overwrite=force):
        typer.secho(f"{target} exists; keeping it (use --force to overwrite)", fg=typer.colors.YELLOW)
    else:
        typer.secho(f"wrote {target}", fg=typer.colors.GREEN)
    return target
