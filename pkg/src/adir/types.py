from __future__ import annotations

import enum
from dataclasses import fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np
import torch

# Common aliases used across the package

JSON = Dict[str, Any]
Shape = Tuple[int, int, int]  # (channels, height, width)
Image = torch.Tensor  # (..., C, H, W), nominal range [0, 1]


def to_serializable(obj: Any) -> Any:
    """
    Best-effort conversion of domain objects to JSON-friendly forms.

    - dataclasses -> dict (field by field, tensors included)
    - enums -> value
    - paths -> posix string
    - tensors / numpy arrays -> nested lists, scalars -> python numbers
    - pydantic models -> model_dump()
    - mappings/sequences -> transformed recursively
    - otherwise return as-is
    """
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_serializable(getattr(obj, f.name)) for f in fields(obj)}

    if isinstance(obj, enum.Enum):
        return obj.value

    if isinstance(obj, Path):
        return obj.as_posix()

    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().tolist()

    if isinstance(obj, np.ndarray):
        return obj.tolist()

    if isinstance(obj, np.generic):
        return obj.item()

    model_dump = getattr(obj, "model_dump", None)
    if callable(model_dump):
        return to_serializable(model_dump())

    if isinstance(obj, Mapping):
        return {str(k): to_serializable(v) for k, v in obj.items()}

    if isinstance(obj, (list, tuple, set)):
        return [to_serializable(v) for v in obj]

    return obj


def image_shape(image: Image) -> Shape:
    """Trailing (C, H, W) of an image tensor."""
    c, h, w = image.shape[-3:]
    return (int(c), int(h), int(w))
