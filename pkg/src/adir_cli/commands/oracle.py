from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from adir.usecases import OracleInput

from ..containers import container
from ..utils.fs import write_file
from ..utils.results import read_config, unwrap_or_exit
from ..utils.templating import render_text

# distinct from the error exits (1 infra, 2 domain)
CHECKS_FAILED = 3


def oracle_check_cmd(
    out: Optional[Path] = None,
    world: Optional[Path] = None,
    config: Optional[Path] = None,
) -> None:
    cfg = read_config(config)
    target = out or cfg.resolve_output(container.settings(), "oracle")
    result = container.oracle_check().execute(OracleInput(config=cfg, out_dir=target, world_dir=world))
    report = unwrap_or_exit(result)
    text = render_text("oracle_report.txt.j2", {"report": report})
    write_file(target / "oracle.txt", text, overwrite=True)
    typer.secho(text, nl=False, fg=typer.colors.GREEN if report.passed else typer.colors.RED)
    if not report.passed:
        raise typer.Exit(CHECKS_FAILED)
