from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from adir.usecases import IngestInput, RetrieveInput

from ..containers import container
from ..utils.results import read_config, unwrap_or_exit


def ingest_cmd(
    corpus: Optional[Path] = None,
    index: Optional[Path] = None,
    config: Optional[Path] = None,
) -> None:
    cfg = read_config(config)
    result = container.ingest().execute(
        IngestInput(config=cfg, corpus_dir=corpus, index_path=index)
    )
    built = unwrap_or_exit(result)
    typer.echo(f"{len(built)} image(s) indexed, fingerprint {built.fingerprint[:12]}")
    if built.skipped:
        typer.secho(f"skipped {len(built.skipped)} unreadable file(s)", fg=typer.colors.YELLOW)


def retrieve_cmd(
    observation: Path,
    k: Optional[int] = None,
    manifest: Optional[Path] = None,
    config: Optional[Path] = None,
) -> None:
    cfg = read_config(config)
    result = container.retrieve().execute(
        RetrieveInput(config=cfg, observation=observation, K=k, manifest=manifest)
    )
    for n in unwrap_or_exit(result):
        typer.echo(f"{n.rank:3d}  {n.distance:.6f}  {n.path}")
