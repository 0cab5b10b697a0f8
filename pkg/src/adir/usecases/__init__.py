from __future__ import annotations

from .adapt import AdaptDenoiser, AdaptInput, AdaptOutput
from .evaluate import EvalInput, EvalReport, EvaluateReconstructions, ImageScore
from .gen_data import GenDataInput, GenDataOutput, GenerateData
from .ingest import IngestCorpus, IngestInput
from .oracle_check import CheckResult, OracleCheck, OracleInput, OracleReport
from .reconstruct import ReconstructImage, ReconstructInput, ReconstructOutput
from .retrieve import RetrieveInput, RetrieveNeighbors
from .train import TrainInput, TrainOutput, TrainPrior

__all__ = [
    "AdaptDenoiser",
    "AdaptInput",
    "AdaptOutput",
    "CheckResult",
    "EvalInput",
    "EvalReport",
    "EvaluateReconstructions",
    "GenDataInput",
    "GenDataOutput",
    "GenerateData",
    "ImageScore",
    "IngestCorpus",
    "IngestInput",
    "OracleCheck",
    "OracleInput",
    "OracleReport",
    "ReconstructImage",
    "ReconstructInput",
    "ReconstructOutput",
    "RetrieveInput",
    "RetrieveNeighbors",
    "TrainInput",
    "TrainOutput",
    "TrainPrior",
]
