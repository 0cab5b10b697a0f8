from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from torch import Tensor

from ..config import RunConfig
from ..errors import NotFound
from ..imageio import read_image
from ..logging import get_logger
from ..ports import EncoderPort, LoggerPort
from ..retrieval import CoarseStatsEncoder, EmbeddingIndex, Neighbor, knn, load_index
from ..use_case import UseCase
from .common import write_csv


@dataclass
class RetrieveInput:
    config: RunConfig
    observation: Path | Tensor
    K: Optional[int] = None
    manifest: Optional[Path] = None


def open_index(cfg: RunConfig) -> EmbeddingIndex:
    if not cfg.index_path.exists():
        raise NotFound(
            "embedding index not found; run `adir ingest` first",
            {"path": str(cfg.index_path)},
        )
    return load_index(cfg.index_path)


def write_manifest(path: Path, neighbors: list[Neighbor]) -> Path:
    return write_csv(path, ["rank", "path", "distance"], ((n.rank, n.path, n.distance) for n in neighbors))


class RetrieveNeighbors(UseCase[RetrieveInput, list[Neighbor]]):
    """K nearest corpus images to an observation."""

    name = "retrieve"

    def __init__(self, encoder: Optional[EncoderPort] = None, logger: Optional[LoggerPort] = None) -> None:
        super().__init__(logger or get_logger(f"adir.{self.name}"))
        self.encoder = encoder or CoarseStatsEncoder()

    def perform(self, input: RetrieveInput) -> list[Neighbor]:
        cfg = input.config
        index = open_index(cfg)
        y = read_image(input.observation) if isinstance(input.observation, Path) else input.observation
        K = input.K or cfg.retrieval.K
        neighbors = knn(y, index, K, encoder=self.encoder)
        if input.manifest is not None:
            write_manifest(input.manifest, neighbors)
        self.logger.info("retrieved neighbors", K=len(neighbors), nearest=neighbors[0].path)
        return neighbors
