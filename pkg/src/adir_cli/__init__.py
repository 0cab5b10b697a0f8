from __future__ import annotations

# Re-export the Typer app and main entry for convenience
from .cli import app, main  # noqa: F401

__all__ = ["app", "main"]
