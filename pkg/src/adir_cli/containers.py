"""
Wiring for the command-line application.

Every use case is a Factory so each command invocation gets a fresh
instance; shared ports (clock, encoder) are Singletons. Tests swap them
with ``container.clock.override(providers.Object(FakeClock()))``.
"""

from __future__ import annotations

from dependency_injector import containers, providers

from adir.config import AdirSettings
from adir.logging import SystemClock, get_logger
from adir.retrieval import CoarseStatsEncoder
from adir.usecases import (
    AdaptDenoiser,
    EvaluateReconstructions,
    GenerateData,
    IngestCorpus,
    OracleCheck,
    ReconstructImage,
    RetrieveNeighbors,
    TrainPrior,
)


def _logger(name: str):
    return providers.Factory(get_logger, f"adir.{name}")


class Container(containers.DeclarativeContainer):
    settings = providers.Singleton(AdirSettings)
    clock = providers.Singleton(SystemClock)
    encoder = providers.Singleton(CoarseStatsEncoder)

    gen_data = providers.Factory(GenerateData, logger=_logger("gen_data"))
    train = providers.Factory(TrainPrior, logger=_logger("train"))
    ingest = providers.Factory(IngestCorpus, encoder=encoder, logger=_logger("ingest"))
    retrieve = providers.Factory(RetrieveNeighbors, encoder=encoder, logger=_logger("retrieve"))
    adapt = providers.Factory(AdaptDenoiser, encoder=encoder, clock=clock, logger=_logger("adapt"))
    reconstruct = providers.Factory(
        ReconstructImage, encoder=encoder, clock=clock, logger=_logger("reconstruct")
    )
    evaluate = providers.Factory(EvaluateReconstructions, logger=_logger("eval"))
    oracle_check = providers.Factory(OracleCheck, logger=_logger("oracle_check"))


container = Container()

__all__ = ["Container", "container"]
