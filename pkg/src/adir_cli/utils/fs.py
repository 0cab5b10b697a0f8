from __future__ import annotations

from pathlib import Path


def write_file(
    path: Path, content: str, *, exist_ok: bool = True, overwrite: bool = False
) -> bool:
    """
    Write a text file, creating parent dirs. Returns True when written.
    If exist_ok is False and the file exists, raise FileExistsError.
    If exist_ok is True and overwrite is False, an existing file is kept.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and not overwrite:
        if not exist_ok:
            raise FileExistsError(str(path))
        return False
    path.write_text(content, encoding="utf-8")
    return True


def ensure_dirs(root: Path, *names: str) -> list[Path]:
    out = []
    for name in names:
        target = root / name
        target.mkdir(parents=True, exist_ok=True)
        out.append(target)
    return out
