from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from torch import Tensor

from .errors import ShapeError

INF_SENTINEL = "INF"


def mse(a: Tensor, b: Tensor) -> float:
    if a.shape != b.shape:
        raise ShapeError("images differ in shape", {"left": list(a.shape), "right": list(b.shape)})
    return float(((a.double() - b.double()) ** 2).mean())


def psnr(a: Tensor, b: Tensor) -> float:
    """10·log10(1/MSE) on the [0, 1] scale; +inf for identical images."""
    err = mse(a, b)
    return math.inf if err == 0 else 10.0 * math.log10(1.0 / err)


def format_psnr(value: float) -> str:
    return INF_SENTINEL if math.isinf(value) and value > 0 else f"{value:.4f}"


def aggregate(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return {"mean": math.nan, "median": math.nan, "count": 0}
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "median": float(np.median(arr)), "count": len(values)}
