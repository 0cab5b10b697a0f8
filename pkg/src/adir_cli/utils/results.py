from __future__ import annotations

from pathlib import Path
from typing import NoReturn, Optional, TypeVar

import typer

from adir.config import RunConfig, load_config
from adir.errors import AdirError, InfraError
from adir.result import Result

T = TypeVar("T")

# details that are too bulky for a terminal line
_HIDDEN_DETAILS = {"trace"}


def exit_code(error: AdirError) -> int:
    return 1 if isinstance(error, InfraError) else 2


def fail(error: AdirError) -> NoReturn:
    typer.secho(f"error [{error.code}]: {error.message}", fg=typer.colors.RED, err=True)
    for key, value in (error.details or {}).items():
        if key not in _HIDDEN_DETAILS:
            typer.secho(f"  {key}: {value}", fg=typer.colors.RED, err=True)
    raise typer.Exit(exit_code(error))


def unwrap_or_exit(result: Result[T, AdirError]) -> T:
    error = result.err
    if error is not None:
        fail(error)
    return result.unwrap()


def read_config(path: Optional[Path]) -> RunConfig:
    try:
        return load_config(path)
    except AdirError as exc:
        fail(exc)
