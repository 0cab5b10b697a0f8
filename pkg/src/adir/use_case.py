from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Generic, Optional, TypeVar

from .errors import AdirError
from .logging import get_logger
from .ports import LoggerPort
from .result import Err, Ok, Result

InputT = TypeVar("InputT")
OutputT = TypeVar("OutputT")


class UseCase(Generic[InputT, OutputT], ABC):
    """
    Base class for every command-line workflow.

    Subclasses implement `perform(input)` and may override hooks:
      - validate(input): raise ParameterError/ConfigError to fail fast
      - before(input): side-effect hook before execution
      - after(result): side-effect hook after execution

    Execution contract:
      - Returns Result[O, AdirError]
      - Exceptions of type AdirError are captured as Err and logged
      - Other exceptions are propagated (let calling layer decide)
    """

    name: str = "use_case"

    def __init__(self, logger: Optional[LoggerPort] = None) -> None:
        self.logger: LoggerPort = logger or get_logger(f"adir.{self.name}")

    def execute(self, input: InputT) -> Result[OutputT, AdirError]:
        try:
            self.validate(input)
            self.before(input)
            out = self.perform(input)
            res: Result[OutputT, AdirError] = (
                out if isinstance(out, Result) else Ok(out)
            )  # type: ignore[assignment]
            self.after(res)
            return res
        except AdirError as ae:
            self.logger.error(
                f"{self.name} failed", code=ae.code, message=ae.message
            )
            res = Err(ae)
            self.after(res)
            return res

    # Hooks ------------------------------------------------------------------

    def validate(self, input: InputT) -> None:
        return None

    def before(self, input: InputT) -> None:
        return None

    def after(self, result: Result[OutputT, AdirError]) -> None:
        return None

    # Implementation point ---------------------------------------------------

    @abstractmethod
    def perform(self, input: InputT) -> OutputT | Result[OutputT, AdirError]:
        """
        Run the workflow.

        May return a plain output (wrapped into Ok) or a Result.
        Raise AdirError to signal failures that should map to Err.
        """
        raise NotImplementedError
