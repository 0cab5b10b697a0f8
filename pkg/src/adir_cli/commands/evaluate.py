from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from adir.metrics import format_psnr
from adir.usecases import EvalInput

from ..containers import container
from ..utils.fs import write_file
from ..utils.results import read_config, unwrap_or_exit
from ..utils.templating import render_text


def eval_cmd(
    recon_dir: Path,
    truth_dir: Path,
    out: Optional[Path] = None,
    workers: Optional[int] = None,
    bicubic: bool = False,
    config: Optional[Path] = None,
) -> None:
    cfg = read_config(config)
    target = out or cfg.resolve_output(container.settings(), "eval")
    result = container.evaluate().execute(
        EvalInput(
            config=cfg, recon_dir=recon_dir, truth_dir=truth_dir, out_dir=target, workers=workers, bicubic=bicubic
        )
    )
    report = unwrap_or_exit(result)
    context = {
        "report": report,
        "bicubic": bicubic,
        "mean": format_psnr(report.mean),
        "median": format_psnr(report.median),
    }
    if bicubic:
        context["bicubic_mean"] = format_psnr(report.bicubic_mean)
        context["bicubic_median"] = format_psnr(report.bicubic_median)
    summary = render_text("eval_summary.txt.j2", context)
    write_file(target / "summary.txt", summary, overwrite=True)
    typer.echo(summary, nl=False)
