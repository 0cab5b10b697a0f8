from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from torch import Tensor

from ..config import RunConfig, config_fingerprint
from ..errors import NotFound, ParameterError
from ..imageio import list_images, read_image, to_channels
from ..metrics import aggregate, format_psnr, psnr
from ..operators import bicubic_resize
from ..use_case import UseCase
from .common import image_seed, write_csv

OBSERVATION_SUFFIX = ".observation.png"


@dataclass
class EvalInput:
    config: RunConfig
    recon_dir: Path
    truth_dir: Path
    out_dir: Optional[Path] = None
    workers: Optional[int] = None
    # also score bicubic upsampling of the observations written next to the reconstructions
    bicubic: bool = False


@dataclass(frozen=True)
class ImageScore:
    name: str
    psnr: float
    seed: int
    bicubic_psnr: Optional[float] = None

    @property
    def psnr_text(self) -> str:
        return format_psnr(self.psnr)

    @property
    def bicubic_text(self) -> str:
        return "" if self.bicubic_psnr is None else format_psnr(self.bicubic_psnr)


@dataclass
class EvalReport:
    scores: list[ImageScore]
    fingerprint: str
    mean: float
    median: float
    bicubic_mean: Optional[float] = None
    bicubic_median: Optional[float] = None
    csv_path: Optional[Path] = None


def _recon_files(directory: Path) -> dict[str, Path]:
    # skip the observation images the reconstruct command writes next to its outputs
    return {p.name: p for p in list_images(directory) if ".observation." not in p.name}


def _observation_path(recon_dir: Path, name: str) -> Path:
    return recon_dir / (Path(name).stem + OBSERVATION_SUFFIX)


def bicubic_baseline(y: Tensor, truth: Tensor) -> Tensor:
    """Observation resized to the truth's grid, clipped to [0, 1] like a written image."""
    y = to_channels(y, int(truth.shape[-3]))
    return bicubic_resize(y, tuple(truth.shape[-2:])).clamp(0.0, 1.0)


class EvaluateReconstructions(UseCase[EvalInput, EvalReport]):
    """PSNR of every reconstruction against the same-named ground truth."""

    name = "eval"

    def validate(self, input: EvalInput) -> None:
        for key in ("recon_dir", "truth_dir"):
            path = getattr(input, key)
            if not path.is_dir():
                raise NotFound(f"{key} is not a directory", {"path": str(path)})

    def perform(self, input: EvalInput) -> EvalReport:
        cfg = input.config
        recon = _recon_files(input.recon_dir)
        truth = {p.name: p for p in list_images(input.truth_dir)}
        orphans = sorted(set(recon) ^ set(truth))
        if orphans:
            raise ParameterError("unmatched filenames", {"orphans": orphans})
        names = sorted(recon)
        if not names:
            raise NotFound("no images to evaluate", {"path": str(input.recon_dir)})
        if input.bicubic:
            missing = [n for n in names if not _observation_path(input.recon_dir, n).is_file()]
            if missing:
                raise NotFound("bicubic scoring needs the observation images", {"missing": missing})

        def score(name: str) -> ImageScore:
            ref = read_image(truth[name])
            bicubic = None
            if input.bicubic:
                y = read_image(_observation_path(input.recon_dir, name))
                bicubic = psnr(bicubic_baseline(y, ref), ref)
            return ImageScore(
                name=name,
                psnr=psnr(read_image(recon[name]), ref),
                seed=image_seed(cfg.seed, name),
                bicubic_psnr=bicubic,
            )

        workers = input.workers or cfg.eval.workers
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, names))

        stats = aggregate([s.psnr for s in scores])
        report = EvalReport(
            scores=scores,
            fingerprint=config_fingerprint(cfg),
            mean=stats["mean"],
            median=stats["median"],
        )
        if input.bicubic:
            base = aggregate([s.bicubic_psnr for s in scores])
            report.bicubic_mean, report.bicubic_median = base["mean"], base["median"]
        if input.out_dir is not None:
            report.csv_path = self._write_csv(input.out_dir / "eval.csv", report, input.bicubic)
        extra = {"bicubic_psnr": report.bicubic_mean} if input.bicubic else {}
        self.logger.info("evaluated", images=len(scores), mean_psnr=report.mean, **extra)
        return report

    @staticmethod
    def _write_csv(path: Path, report: EvalReport, bicubic: bool) -> Path:
        header = ["image", "psnr_db", "seed"]
        rows = [[s.name, s.psnr_text, s.seed] for s in report.scores]
        totals = [["mean", format_psnr(report.mean), ""], ["median", format_psnr(report.median), ""]]
        if bicubic:
            header.append("bicubic_psnr_db")
            for row, s in zip(rows, report.scores):
                row.append(s.bicubic_text)
            totals[0].append(format_psnr(report.bicubic_mean))
            totals[1].append(format_psnr(report.bicubic_median))
        return write_csv(path, header, rows + totals)
