from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..config import RunConfig
from ..logging import get_logger
from ..ports import EncoderPort, LoggerPort
from ..retrieval import CoarseStatsEncoder, EmbeddingIndex, ingest
from ..use_case import UseCase


@dataclass
class IngestInput:
    config: RunConfig
    corpus_dir: Optional[Path] = None
    index_path: Optional[Path] = None


class IngestCorpus(UseCase[IngestInput, EmbeddingIndex]):
    name = "ingest"

    def __init__(self, encoder: Optional[EncoderPort] = None, logger: Optional[LoggerPort] = None) -> None:
        super().__init__(logger or get_logger(f"adir.{self.name}"))
        self.encoder = encoder or CoarseStatsEncoder()

    def perform(self, input: IngestInput) -> EmbeddingIndex:
        cfg = input.config
        corpus = input.corpus_dir or cfg.corpus_dir
        index_path = input.index_path or cfg.index_path
        return ingest(corpus, index_path, encoder=self.encoder, logger=self.logger)
