from __future__ import annotations

from adir_cli.cli import app, main

__all__ = ["main", "app"]

if __name__ == "__main__":
    main()
