"""
Image and array files.

Images are stored 8-bit (PNG, or binary PGM/PPM) and loaded as float64
(C, H, W) tensors on the [0, 1] scale. Dense arrays (kernels, masks, Gaussian
worlds) use a plain-text format: a first line with the dimensions followed
by whitespace-separated values in row-major order. Lines starting with '#'
are comments.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np
import torch
from PIL import Image as PILImage
from PIL import UnidentifiedImageError
from torch import Tensor

from .errors import FormatError, ShapeError

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


def list_images(directory: str | Path) -> list[Path]:
    root = Path(directory)
    return sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def read_image(path: str | Path) -> Tensor:
    path = Path(path)
    try:
        with PILImage.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            elif mode == "L":
                arr = np.asarray(img, dtype=np.float64) / 255.0
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise FormatError(f"cannot decode image: {exc}", {"path": str(path)}) from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(np.ascontiguousarray(arr))


def to_uint8(image: Tensor) -> np.ndarray:
    if image.dim() != 3 or image.shape[0] not in (1, 3):
        raise ShapeError("expected a (1|3, H, W) image", {"shape": list(image.shape)})
    arr = image.detach().to(torch.float64).clamp(0.0, 1.0).numpy()
    return np.rint(arr * 255.0).astype(np.uint8)


def quantize(image: Tensor) -> Tensor:
    """Value the image takes after an 8-bit write and read."""
    return torch.from_numpy(to_uint8(image).astype(np.float64) / 255.0)


def write_image(image: Tensor, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = to_uint8(image)
    if arr.shape[0] == 1:
        pil = PILImage.fromarray(arr[0], mode="L")
    else:
        pil = PILImage.fromarray(arr.transpose(1, 2, 0), mode="RGB")
    pil.save(path)
    return path


def to_channels(image: Tensor, channels: int) -> Tensor:
    """Grayscale <-> RGB conversion on (..., C, H, W) tensors."""
    c = image.shape[-3]
    if c == channels:
        return image
    if channels == 1 and c == 3:
        weights = torch.tensor([0.299, 0.587, 0.114], dtype=image.dtype)
        return (image * weights[:, None, None]).sum(dim=-3, keepdim=True)
    if channels == 3 and c == 1:
        return image.expand(image.shape[:-3] + (3,) + tuple(image.shape[-2:])).clone()
    raise ShapeError("unsupported channel conversion", {"from": int(c), "to": channels})


def read_mask(path: str | Path) -> Tensor:
    """Binary mask from an image: 1 where the first channel is above one half."""
    image = read_image(path)
    return (image[:1] > 0.5).to(torch.float64)


# Text arrays -----------------------------------------------------------------


def _data_lines(lines: Iterable[str]) -> list[str]:
    out = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def load_array_text(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        lines = _data_lines(path.read_text(encoding="utf-8").splitlines())
    except OSError as exc:
        raise FormatError(f"cannot read array file: {exc}", {"path": str(path)}) from exc
    if not lines:
        raise FormatError("array file is empty", {"path": str(path)})
    try:
        dims = tuple(int(d) for d in lines[0].split())
        values = np.array([float(v) for line in lines[1:] for v in line.split()], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"malformed array file: {exc}", {"path": str(path)}) from exc
    if not dims or any(d < 0 for d in dims) or int(np.prod(dims)) != values.size:
        raise FormatError(
            "array size does not match its header",
            {"path": str(path), "dims": list(dims), "values": int(values.size)},
        )
    return values.reshape(dims)


def save_array_text(array: np.ndarray | Tensor, path: str | Path) -> Path:
    arr = array.detach().cpu().numpy() if isinstance(array, Tensor) else np.asarray(array)
    arr = arr.astype(np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr.reshape(1, -1)
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in rows)
    path.write_text(" ".join(str(d) for d in arr.shape) + "\n" + body + "\n", encoding="utf-8")
    return path
