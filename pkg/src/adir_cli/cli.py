from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from adir.config import Method
from adir.logging import configure_logging

from .commands.data import gen_data_cmd
from .commands.evaluate import eval_cmd
from .commands.init import init_cmd
from .commands.oracle import oracle_check_cmd
from .commands.reconstruct import adapt_cmd, reconstruct_cmd
from .commands.retrieval import ingest_cmd, retrieve_cmd
from .commands.train import train_cmd
from .containers import container

app = typer.Typer(help="Adaptive diffusion image reconstruction", no_args_is_help=True)

ConfigOpt = typer.Option(None, "--config", "-c", help="Run config file (key = value lines)")
ProgressOpt = typer.Option(True, "--progress/--no-progress", help="Show progress bars")


@app.callback()
def root(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    configure_logging("DEBUG" if verbose else container.settings().log_level)


@app.command("init")
def init(
    directory: Path = typer.Argument(Path("."), help="Experiment directory"),
    force: bool = typer.Option(False, help="Overwrite an existing config file"),
):
    """Scaffold an experiment directory with a commented default config."""
    init_cmd(directory=directory, force=force)


@app.command("gen-data")
def gen_data(
    out: Path = typer.Option(..., "--out", "-o", help="Output directory"),
    kind: Optional[str] = typer.Option(None, help="textures|gaussians (default: data.kind)"),
    count: Optional[int] = typer.Option(None, help="Number of samples (default: data.count)"),
    seed: Optional[int] = typer.Option(None, help="Seed (default: data.seed)"),
    config: Optional[Path] = ConfigOpt,
):
    """Write a deterministic synthetic corpus."""
    gen_data_cmd(out=out, kind=kind, count=count, seed=seed, config=config)


@app.command("train")
def train(
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Checkpoint path"),
    data: Optional[Path] = typer.Option(None, help="Training images (default: train_dir)"),
    config: Optional[Path] = ConfigOpt,
    progress: bool = ProgressOpt,
):
    """Train the prior noise predictor."""
    train_cmd(out=out, data=data, config=config, progress=progress)


@app.command("ingest")
def ingest(
    corpus: Optional[Path] = typer.Option(None, help="Corpus directory (default: corpus_dir)"),
    index: Optional[Path] = typer.Option(None, help="Index file (default: index_path)"),
    config: Optional[Path] = ConfigOpt,
):
    """Embed a corpus directory into a k-NN index."""
    ingest_cmd(corpus=corpus, index=index, config=config)


@app.command("retrieve")
def retrieve(
    observation: Path = typer.Argument(..., help="Degraded observation image"),
    k: Optional[int] = typer.Option(None, "-k", help="Neighbours (default: retrieval.K)"),
    manifest: Optional[Path] = typer.Option(None, help="Write rank,path,distance CSV"),
    config: Optional[Path] = ConfigOpt,
):
    """List the K nearest corpus images to an observation."""
    retrieve_cmd(observation=observation, k=k, manifest=manifest, config=config)


@app.command("adapt")
def adapt(
    observation: Path = typer.Argument(..., help="Degraded observation image"),
    checkpoint: Path = typer.Option(..., help="Checkpoint to adapt"),
    out: Path = typer.Option(..., "--out", "-o", help="Adapted checkpoint path"),
    method: Method = typer.Option(Method.ADIR, help="ia adapts on the observation, adir on its neighbours"),
    config: Optional[Path] = ConfigOpt,
    progress: bool = ProgressOpt,
):
    """Fine-tune a checkpoint for one observation."""
    adapt_cmd(
        observation=observation,
        checkpoint=checkpoint,
        out=out,
        method=method,
        config=config,
        progress=progress,
    )


@app.command("reconstruct")
def reconstruct(
    checkpoint: Path = typer.Option(..., help="Prior checkpoint"),
    observation: Optional[Path] = typer.Option(None, help="Observation image or directory"),
    truth: Optional[Path] = typer.Option(None, help="Clean image or directory to degrade"),
    method: Optional[Method] = typer.Option(None, help="Default: the config's method"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Output directory"),
    config: Optional[Path] = ConfigOpt,
    progress: bool = ProgressOpt,
):
    """Guided reconstruction, optionally after test-time adaptation."""
    reconstruct_cmd(
        checkpoint=checkpoint,
        observation=observation,
        truth=truth,
        method=method,
        out_dir=out_dir,
        config=config,
        progress=progress,
    )


@app.command("eval")
def evaluate(
    recon_dir: Path = typer.Argument(..., help="Reconstructions"),
    truth_dir: Path = typer.Argument(..., help="Ground truth with the same file names"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Report directory"),
    workers: Optional[int] = typer.Option(None, help="Thread pool size (default: eval.workers)"),
    bicubic: bool = typer.Option(False, help="Also score bicubic upsampling of the written observations"),
    config: Optional[Path] = ConfigOpt,
):
    """PSNR report for a directory of reconstructions."""
    eval_cmd(recon_dir=recon_dir, truth_dir=truth_dir, out=out, workers=workers, bicubic=bicubic, config=config)


@app.command("oracle-check")
def oracle_check(
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Report directory"),
    world: Optional[Path] = typer.Option(None, help="Directory with m0.txt, C0.txt [, A.txt]"),
    config: Optional[Path] = ConfigOpt,
):
    """Run the closed-form Gaussian acceptance checks."""
    oracle_check_cmd(out=out, world=world, config=config)


def main():
    app()


__all__ = ["app", "main"]
