"""
Linear measurement operators A with exact adjoints, and the observation
model y = A·x + e.

Images are tensors shaped (..., C, H, W); leading batch dimensions pass
through every operator untouched. Convolutions use reflect boundaries
(mirror without repeating the edge sample) and the adjoints are the exact
transposes of the padded convolutions, including the folding of the
mirrored border back onto the interior.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ParameterError, ShapeError
from .types import Shape

BICUBIC_A = -0.5
DEBLUR_SIGMA = 10.0 / 255.0
# Gaussian deblur preset: kernel size and standard deviation in pixels
GAUSSIAN_BLUR_SIZE = 9
GAUSSIAN_BLUR_STD = 1.6


class Task(str, Enum):
    SR2 = "sr2"
    SR4 = "sr4"
    SR8 = "sr8"
    DEBLUR = "deblur"
    DEBLUR_GAUSSIAN = "deblur-gaussian"
    INPAINT = "inpaint"


class LinearOperator(ABC):
    """A: input_shape -> output_shape, with `adjoint` its exact transpose."""

    input_shape: Shape
    output_shape: Shape

    def apply(self, x: Tensor) -> Tensor:
        self._expect(x, self.input_shape, "apply")
        return self._apply(x)

    def adjoint(self, v: Tensor) -> Tensor:
        self._expect(v, self.output_shape, "adjoint")
        return self._adjoint(v)

    @staticmethod
    def _expect(x: Tensor, shape: Shape, what: str) -> None:
        if x.dim() < 3 or tuple(x.shape[-3:]) != tuple(shape):
            raise ShapeError(
                f"{what}: expected trailing shape {tuple(shape)}",
                {"got": list(x.shape), "expected": list(shape)},
            )

    @abstractmethod
    def _apply(self, x: Tensor) -> Tensor: ...

    @abstractmethod
    def _adjoint(self, v: Tensor) -> Tensor: ...

    @property
    def variant(self) -> str:
        return type(self).__name__.removesuffix("Operator").lower()


def apply(A: LinearOperator, x: Tensor) -> Tensor:
    return A.apply(x)


def adjoint(A: LinearOperator, v: Tensor) -> Tensor:
    return A.adjoint(v)


# Reflect-padding helpers -----------------------------------------------------


def _planes(x: Tensor) -> tuple[Tensor, tuple[int, ...]]:
    lead = tuple(x.shape[:-2])
    return x.reshape(-1, 1, x.shape[-2], x.shape[-1]), lead


def _fold_reflect(g: Tensor, p: int, dim: int) -> Tensor:
    """Transpose of reflect padding by `p` along `dim`."""
    n = g.shape[dim] - 2 * p
    core = g.narrow(dim, p, n).clone()
    if p == 0:
        return core
    # g[i], i < p, mirrors x[p - i]; g[p + n + k] mirrors x[n - 2 - k]
    core.narrow(dim, 1, p).add_(g.narrow(dim, 0, p).flip(dim))
    core.narrow(dim, n - 1 - p, p).add_(g.narrow(dim, p + n, p).flip(dim))
    return core


def _padded_correlate(x: Tensor, kernel: Tensor, pad: int, stride: int) -> Tensor:
    planes, lead = _planes(x)
    padded = F.pad(planes, (pad, pad, pad, pad), mode="reflect")
    out = F.conv2d(padded, kernel.to(x.dtype)[None, None], stride=stride)
    return out.reshape(lead + tuple(out.shape[-2:]))


def _padded_correlate_t(v: Tensor, kernel: Tensor, pad: int, stride: int, size: tuple[int, int]) -> Tensor:
    planes, lead = _planes(v)
    g = F.conv_transpose2d(planes, kernel.to(v.dtype)[None, None], stride=stride)
    g = _fold_reflect(_fold_reflect(g, pad, dim=2), pad, dim=3)
    if tuple(g.shape[-2:]) != tuple(size):
        raise ShapeError("adjoint produced an unexpected size", {"got": list(g.shape), "expected": list(size)})
    return g.reshape(lead + tuple(size))


# Variants --------------------------------------------------------------------


@dataclass(eq=False)
class IdentityOperator(LinearOperator):
    input_shape: Shape

    @property
    def output_shape(self) -> Shape:  # type: ignore[override]
        return self.input_shape

    def _apply(self, x: Tensor) -> Tensor:
        return x

    def _adjoint(self, v: Tensor) -> Tensor:
        return v


@dataclass(eq=False)
class BlurOperator(LinearOperator):
    """K×K correlation with reflect boundary (K odd)."""

    kernel: Tensor
    input_shape: Shape

    def __post_init__(self) -> None:
        k = self.kernel
        if k.dim() != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ParameterError("blur kernel must be square with odd size", {"shape": list(k.shape)})
        self.kernel = k.to(torch.float64)
        self.pad = k.shape[0] // 2
        _, h, w = self.input_shape
        if self.pad >= min(h, w):
            raise ParameterError("kernel too large for reflect padding", {"kernel": int(k.shape[0])})

    @property
    def output_shape(self) -> Shape:  # type: ignore[override]
        return self.input_shape

    def _apply(self, x: Tensor) -> Tensor:
        return _padded_correlate(x, self.kernel, self.pad, 1)

    def _adjoint(self, v: Tensor) -> Tensor:
        return _padded_correlate_t(v, self.kernel, self.pad, 1, self.input_shape[1:])


@dataclass(eq=False)
class DownsampleOperator(LinearOperator):
    """Separable antialias filter followed by stride-γ decimation."""

    taps: Tensor
    stride: int
    input_shape: Shape

    def __post_init__(self) -> None:
        c, h, w = self.input_shape
        if h % self.stride or w % self.stride:
            raise ParameterError(
                "image size must be divisible by the stride",
                {"shape": list(self.input_shape), "stride": self.stride},
            )
        n = int(self.taps.shape[0])
        if (n - self.stride) % 2:
            raise ParameterError("tap count and stride must have equal parity", {"taps": n})
        self.taps = self.taps.to(torch.float64)
        self.kernel = torch.outer(self.taps, self.taps)
        self.pad = (n - self.stride) // 2
        if self.pad >= min(h, w):
            raise ParameterError("antialias support too large for the image", {"pad": self.pad})

    @property
    def output_shape(self) -> Shape:  # type: ignore[override]
        c, h, w = self.input_shape
        return (c, h // self.stride, w // self.stride)

    def _apply(self, x: Tensor) -> Tensor:
        return _padded_correlate(x, self.kernel, self.pad, self.stride)

    def _adjoint(self, v: Tensor) -> Tensor:
        return _padded_correlate_t(v, self.kernel, self.pad, self.stride, self.input_shape[1:])


@dataclass(eq=False)
class MaskOperator(LinearOperator):
    """Pixelwise {0,1} mask; idempotent and self-adjoint."""

    mask: Tensor
    input_shape: Shape

    def __post_init__(self) -> None:
        m = self.mask
        if m.dim() == 2:
            m = m[None]
        if not bool(torch.all((m == 0) | (m == 1))):
            raise ParameterError("mask entries must be 0 or 1")
        if tuple(m.shape[-2:]) != tuple(self.input_shape[1:]) or m.shape[0] not in (1, self.input_shape[0]):
            raise ShapeError("mask does not match the image", {"mask": list(m.shape), "image": list(self.input_shape)})
        self.mask = m.to(torch.float64)

    @property
    def output_shape(self) -> Shape:  # type: ignore[override]
        return self.input_shape

    def _apply(self, x: Tensor) -> Tensor:
        return x * self.mask.to(x.dtype)

    def _adjoint(self, v: Tensor) -> Tensor:
        return v * self.mask.to(v.dtype)


@dataclass(eq=False)
class MatrixOperator(LinearOperator):
    """Dense m×n matrix acting on flattened images."""

    matrix: Tensor
    input_shape: Shape
    output_shape: Shape  # type: ignore[misc]

    def __post_init__(self) -> None:
        m, n = self.matrix.shape
        if n != math.prod(self.input_shape) or m != math.prod(self.output_shape):
            raise ShapeError(
                "matrix does not match the declared shapes",
                {"matrix": [m, n], "input": list(self.input_shape), "output": list(self.output_shape)},
            )

    def _apply(self, x: Tensor) -> Tensor:
        flat = x.reshape(x.shape[:-3] + (-1,))
        return (flat @ self.matrix.to(x.dtype).T).reshape(x.shape[:-3] + tuple(self.output_shape))

    def _adjoint(self, v: Tensor) -> Tensor:
        flat = v.reshape(v.shape[:-3] + (-1,))
        return (flat @ self.matrix.to(v.dtype)).reshape(v.shape[:-3] + tuple(self.input_shape))


@dataclass(eq=False)
class ComposeOperator(LinearOperator):
    """ops[0] is applied first."""

    ops: Sequence[LinearOperator]

    def __post_init__(self) -> None:
        if not self.ops:
            raise ParameterError("compose needs at least one operator")
        for a, b in zip(self.ops, self.ops[1:]):
            if tuple(a.output_shape) != tuple(b.input_shape):
                raise ShapeError(
                    "composed operators do not chain",
                    {"left": list(a.output_shape), "right": list(b.input_shape)},
                )

    @property
    def input_shape(self) -> Shape:  # type: ignore[override]
        return self.ops[0].input_shape

    @property
    def output_shape(self) -> Shape:  # type: ignore[override]
        return self.ops[-1].output_shape

    def _apply(self, x: Tensor) -> Tensor:
        for op in self.ops:
            x = op.apply(x)
        return x

    def _adjoint(self, v: Tensor) -> Tensor:
        for op in reversed(self.ops):
            v = op.adjoint(v)
        return v


# Constructors ----------------------------------------------------------------


def cubic(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    near = ((a + 2) * ax - (a + 3)) * ax**2 + 1
    far = ((a * ax - 5 * a) * ax + 8 * a) * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def bicubic_taps(stride: int) -> Tensor:
    """4γ antialias taps: the a=-0.5 cubic stretched over the γ-fold grid, sum 1."""
    m = np.arange(4 * stride, dtype=np.float64)
    taps = cubic((m - 2 * stride + 0.5) / stride)
    return torch.from_numpy(taps / taps.sum())


def make_sr_operator(gamma: int, in_shape: Shape) -> DownsampleOperator:
    if gamma not in (2, 4, 8):
        raise ParameterError("scale factor must be 2, 4 or 8", {"gamma": gamma})
    return DownsampleOperator(taps=bicubic_taps(gamma), stride=gamma, input_shape=tuple(in_shape))


def make_blur_operator(kernel: Tensor | np.ndarray, in_shape: Shape) -> BlurOperator:
    return BlurOperator(kernel=torch.as_tensor(kernel, dtype=torch.float64), input_shape=tuple(in_shape))


def make_uniform_blur(size: int, in_shape: Shape) -> BlurOperator:
    k = torch.full((size, size), 1.0 / (size * size), dtype=torch.float64)
    return make_blur_operator(k, in_shape)


def gaussian_kernel(size: int, std: float) -> Tensor:
    """Normalised isotropic Gaussian, size×size with size odd."""
    if size < 1 or size % 2 == 0:
        raise ParameterError("kernel size must be odd and positive", {"size": size})
    if std <= 0:
        raise ParameterError("kernel std must be positive", {"std": std})
    r = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-0.5 * (r / std) ** 2)
    k = torch.outer(g, g)
    return k / k.sum()


def rectangle_mask(shape: Shape, top: int, left: int, height: int, width: int) -> Tensor:
    """1 = observed, 0 = missing rectangle."""
    _, h, w = shape
    m = torch.ones((1, h, w), dtype=torch.float64)
    m[:, top: top + height, left: left + width] = 0.0
    return m


def make_mask_operator(mask: Tensor, in_shape: Shape) -> MaskOperator:
    return MaskOperator(mask=mask, input_shape=tuple(in_shape))


def operator_for_task(
    task: Task | str,
    shape: Shape,
    mask: Tensor | None = None,
    kernel: Tensor | None = None,
) -> tuple[LinearOperator, float]:
    """Operator and default noise level for a task preset; `kernel` replaces a deblur preset's kernel."""
    task = Task(task)
    deblur = (Task.DEBLUR, Task.DEBLUR_GAUSSIAN)
    if kernel is not None and task not in deblur:
        raise ParameterError("a blur kernel only applies to the deblur tasks", {"task": task.value})
    if task is Task.SR2:
        return make_sr_operator(2, shape), 0.0
    if task is Task.SR4:
        return make_sr_operator(4, shape), 0.0
    if task is Task.SR8:
        return make_sr_operator(8, shape), 0.0
    if task is Task.DEBLUR:
        op = make_uniform_blur(5, shape) if kernel is None else make_blur_operator(kernel, shape)
        return op, DEBLUR_SIGMA
    if task is Task.DEBLUR_GAUSSIAN:
        k = gaussian_kernel(GAUSSIAN_BLUR_SIZE, GAUSSIAN_BLUR_STD) if kernel is None else kernel
        return make_blur_operator(k, shape), DEBLUR_SIGMA
    _, h, w = shape
    if mask is None:
        mask = rectangle_mask(shape, h // 4, w // 4, h // 2, w // 2)
    return make_mask_operator(mask, shape), 0.0


def as_matrix(A: LinearOperator, dtype: torch.dtype = torch.float64) -> Tensor:
    n = math.prod(A.input_shape)
    if n > 4096:
        raise ParameterError("operator too large to materialise", {"n": n})
    basis = torch.eye(n, dtype=dtype).reshape((n,) + tuple(A.input_shape))
    cols = A.apply(basis).reshape(n, -1)
    return cols.T.contiguous()


# Resampling ------------------------------------------------------------------


def _reflect_index(j: int, n: int) -> int:
    if n == 1:
        return 0
    period = 2 * (n - 1)
    j = abs(j) % period
    return period - j if j >= n else j


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic a=-0.5 cubic resampling matrix (antialiased when shrinking)."""
    scale = n_out / n_in
    kscale = min(1.0, scale)
    support = 2.0 / kscale
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        u = (i + 0.5) / scale - 0.5
        lo, hi = math.ceil(u - support), math.floor(u + support)
        js = np.arange(lo, hi + 1)
        wts = cubic((u - js) * kscale)
        for j, wt in zip(js, wts):
            mat[i, _reflect_index(int(j), n_in)] += wt
        mat[i] /= mat[i].sum()
    return mat


def bicubic_resize(image: Tensor, size: tuple[int, int]) -> Tensor:
    h, w = image.shape[-2:]
    if (h, w) == tuple(size):
        return image
    mh = torch.from_numpy(resize_matrix(h, size[0])).to(image.dtype)
    mw = torch.from_numpy(resize_matrix(w, size[1])).to(image.dtype)
    return mh @ image @ mw.T


# Observation model -----------------------------------------------------------


@dataclass(eq=False)
class Observation:
    y: Tensor
    operator: LinearOperator
    sigma: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ParameterError("sigma must be non-negative", {"sigma": self.sigma})
        LinearOperator._expect(self.y, self.operator.output_shape, "observation")


def degrade(x: Tensor, A: LinearOperator, sigma: float, seed: int = 0) -> Observation:
    if sigma < 0:
        raise ParameterError("sigma must be non-negative", {"sigma": sigma})
    clean = A.apply(x)
    if sigma == 0:
        return Observation(y=clean, operator=A, sigma=0.0, seed=seed)
    gen = torch.Generator().manual_seed(int(seed))
    z = torch.randn(clean.shape, generator=gen, dtype=clean.dtype)
    return Observation(y=clean + sigma * z, operator=A, sigma=float(sigma), seed=seed)
