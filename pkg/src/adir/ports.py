from __future__ import annotations

from typing import TYPE_CHECKING, Any, Protocol, runtime_checkable

from torch import Tensor

if TYPE_CHECKING:
    from .retrieval import Embedding


@runtime_checkable
class Port(Protocol):
    """
    Marker protocol for adir ports (dependencies).
    Ports define behavior (contracts) that the workflows depend on.
    """


@runtime_checkable
class LoggerPort(Port, Protocol):
    """
    Minimal structured logger port. Accepts a message and optional contextual fields.
    """

    def debug(self, msg: str, **fields: Any) -> None: ...
    def info(self, msg: str, **fields: Any) -> None: ...
    def warning(self, msg: str, **fields: Any) -> None: ...
    def error(self, msg: str, **fields: Any) -> None: ...


@runtime_checkable
class ClockPort(Port, Protocol):
    """
    Clock abstraction to enable deterministic tests.
    """

    def monotonic(self) -> float: ...


@runtime_checkable
class NoisePredictor(Port, Protocol):
    """
    Anything that predicts the noise in x_t: a trained network or the
    closed-form Gaussian denoiser.

    `t` is the 1-based diffusion step of the schedule the predictor was
    trained for. `vjp` returns Jᵀ·cotangent with J = ∂predict/∂x_t.
    """

    def predict(self, x_t: Tensor, t: int) -> Tensor: ...
    def vjp(self, x_t: Tensor, t: int, cotangent: Tensor) -> Tensor: ...


@runtime_checkable
class EncoderPort(Port, Protocol):
    """
    Visual encoder used for retrieval. Must return unit-norm embeddings.
    """

    dimension: int

    def embed(self, image: Tensor) -> "Embedding": ...
