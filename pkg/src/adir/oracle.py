"""
Closed-form linear-Gaussian world.

With x0 ~ N(m0, C0) every quantity the sampler approximates is available
exactly: the noisy marginals, the MMSE noise predictor, E[x0 | x_t] and the
Bayes posterior for y = A·x + e. Dimensions stay small (n ≤ 64), so all
linear algebra is dense float64 through Cholesky factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch
from torch import Tensor

from .diffusion import DiffusionSchedule
from .errors import ParameterError, ShapeError
from .imageio import load_array_text
from .operators import LinearOperator, MatrixOperator, as_matrix
from .ports import NoisePredictor
from .types import Shape

MAX_DIMENSION = 64


@dataclass(frozen=True, eq=False)
class GaussianWorld:
    m0: Tensor
    C0: Tensor
    shape: Shape
    sched: DiffusionSchedule

    def __post_init__(self) -> None:
        n = self.m0.numel()
        if n > MAX_DIMENSION:
            raise ParameterError("oracle dimension is capped", {"n": n, "max": MAX_DIMENSION})
        if tuple(self.C0.shape) != (n, n) or math.prod(self.shape) != n:
            raise ShapeError(
                "world dimensions disagree",
                {"m0": n, "C0": list(self.C0.shape), "shape": list(self.shape)},
            )
        if not torch.allclose(self.C0, self.C0.T, atol=1e-12, rtol=0):
            raise ParameterError("C0 must be symmetric")
        _, info = torch.linalg.cholesky_ex(self.C0.to(torch.float64))
        if int(info) != 0:
            raise ParameterError("C0 must be positive definite")
        object.__setattr__(self, "m0", self.m0.reshape(n).to(torch.float64))
        object.__setattr__(self, "C0", self.C0.to(torch.float64))

    @property
    def n(self) -> int:
        return self.m0.numel()


def _flat(world: GaussianWorld, x: Tensor) -> tuple[Tensor, tuple[int, ...]]:
    if tuple(x.shape[-3:]) != tuple(world.shape):
        raise ShapeError("image does not match the world", {"got": list(x.shape), "expected": list(world.shape)})
    lead = tuple(x.shape[:-3])
    return x.reshape(lead + (world.n,)).to(torch.float64), lead


def _noisy_cov(world: GaussianWorld, abar: float) -> Tensor:
    eye = torch.eye(world.n, dtype=torch.float64)
    return abar * world.C0 + (1.0 - abar) * eye


def _solve(cov: Tensor, rhs: Tensor) -> Tensor:
    """cov⁻¹·rhs for rhs shaped (..., n)."""
    chol = torch.linalg.cholesky(cov)
    sol = torch.cholesky_solve(rhs.reshape(-1, rhs.shape[-1]).T, chol)
    return sol.T.reshape(rhs.shape)


def marginal_moments(world: GaussianWorld, t: int) -> tuple[Tensor, Tensor]:
    abar = world.sched.alpha_bar(t)
    return math.sqrt(abar) * world.m0, _noisy_cov(world, abar)


def optimal_eps(world: GaussianWorld, x_t: Tensor, t: int) -> Tensor:
    """ε*(x_t, t) = √(1−ᾱ)·(ᾱC0 + (1−ᾱ)I)⁻¹(x_t − √ᾱ·m0)."""
    abar = world.sched.alpha_bar(t)
    if abar >= 1.0:
        raise ParameterError("optimal noise is undefined where alpha_bar = 1", {"t": t})
    flat, lead = _flat(world, x_t)
    out = math.sqrt(1.0 - abar) * _solve(_noisy_cov(world, abar), flat - math.sqrt(abar) * world.m0)
    return out.reshape(lead + tuple(world.shape)).to(x_t.dtype)


def conditional_moments(world: GaussianWorld, x_t: Tensor, t: int) -> tuple[Tensor, Tensor]:
    """E[x0 | x_t] (image-shaped) and Cov[x0 | x_t] (n×n)."""
    abar = world.sched.alpha_bar(t)
    flat, lead = _flat(world, x_t)
    cov = _noisy_cov(world, abar)
    gain = math.sqrt(abar) * world.C0
    mean = world.m0 + _solve(cov, flat - math.sqrt(abar) * world.m0) @ gain.T
    post = world.C0 - abar * world.C0 @ torch.linalg.solve(cov, world.C0)
    post = 0.5 * (post + post.T)
    return mean.reshape(lead + tuple(world.shape)), post


def posterior_moments(
    world: GaussianWorld, A: LinearOperator | Tensor, sigma: float, y: Tensor
) -> tuple[Tensor, Tensor]:
    """
    Exact posterior of x0 given y = A·x0 + e, e ~ N(0, σ²I).

    Uses the gain form S = A·C0·Aᵀ + σ²I, K = C0·Aᵀ·S⁻¹, which stays
    well defined at σ = 0 as long as A has full row rank.
    """
    if sigma < 0:
        raise ParameterError("sigma must be non-negative", {"sigma": sigma})
    mat = as_matrix(A) if isinstance(A, LinearOperator) else A.to(torch.float64)
    if mat.shape[1] != world.n:
        raise ShapeError("operator does not act on the world", {"A": list(mat.shape), "n": world.n})
    yv = y.reshape(-1).to(torch.float64)
    if yv.numel() != mat.shape[0]:
        raise ShapeError("observation does not match the operator", {"y": yv.numel(), "m": mat.shape[0]})
    S = mat @ world.C0 @ mat.T + sigma**2 * torch.eye(mat.shape[0], dtype=torch.float64)
    S = 0.5 * (S + S.T)
    chol, info = torch.linalg.cholesky_ex(S)
    if int(info) != 0:
        raise ParameterError(
            "observation covariance is singular; use sigma > 0 or a full-rank operator",
            {"sigma": sigma},
        )
    CA = world.C0 @ mat.T
    gain = torch.cholesky_solve(CA.T, chol).T
    mean = world.m0 + gain @ (yv - mat @ world.m0)
    cov = world.C0 - gain @ CA.T
    cov = 0.5 * (cov + cov.T)
    return mean.reshape(world.shape), cov


def sample_prior(world: GaussianWorld, count: int, generator: Optional[torch.Generator] = None) -> Tensor:
    chol = torch.linalg.cholesky(world.C0)
    z = torch.randn((count, world.n), generator=generator, dtype=torch.float64)
    return (world.m0 + z @ chol.T).reshape((count,) + tuple(world.shape))


def random_world(
    n: int,
    sched: DiffusionSchedule,
    seed: int = 0,
    shape: Optional[Shape] = None,
) -> GaussianWorld:
    """Random SPD covariance with eigenvalues bounded away from zero."""
    shape = tuple(shape) if shape is not None else (1, 1, n)
    gen = torch.Generator().manual_seed(int(seed))
    L = torch.randn((n, n), generator=gen, dtype=torch.float64) / math.sqrt(n)
    C0 = 0.25 * (L @ L.T) + 0.05 * torch.eye(n, dtype=torch.float64)
    m0 = 0.5 + 0.2 * torch.randn(n, generator=gen, dtype=torch.float64)
    return GaussianWorld(m0=m0, C0=0.5 * (C0 + C0.T), shape=shape, sched=sched)


def random_operator(m: int, world: GaussianWorld, seed: int = 0) -> MatrixOperator:
    gen = torch.Generator().manual_seed(int(seed))
    mat = torch.randn((m, world.n), generator=gen, dtype=torch.float64) / math.sqrt(world.n)
    return MatrixOperator(matrix=mat, input_shape=world.shape, output_shape=(1, 1, m))


def load_world(
    directory: str | Path, sched: DiffusionSchedule, shape: Optional[Shape] = None
) -> tuple[GaussianWorld, Optional[MatrixOperator]]:
    """Reads m0.txt, C0.txt and, when present, A.txt from `directory`."""
    root = Path(directory)
    m0 = torch.from_numpy(load_array_text(root / "m0.txt")).reshape(-1)
    C0 = torch.from_numpy(load_array_text(root / "C0.txt"))
    world = GaussianWorld(m0=m0, C0=C0, shape=tuple(shape) if shape else (1, 1, m0.numel()), sched=sched)
    a_path = root / "A.txt"
    if not a_path.exists():
        return world, None
    mat = torch.from_numpy(load_array_text(a_path))
    if mat.dim() != 2:
        raise ShapeError("A must be a matrix", {"shape": list(mat.shape)})
    return world, MatrixOperator(matrix=mat, input_shape=world.shape, output_shape=(1, 1, int(mat.shape[0])))


class GaussianPredictor(NoisePredictor):
    """The MMSE noise predictor of a GaussianWorld."""

    def __init__(self, world: GaussianWorld) -> None:
        self.world = world

    def predict(self, x_t: Tensor, t: int) -> Tensor:
        return optimal_eps(self.world, x_t, t)

    def vjp(self, x_t: Tensor, t: int, cotangent: Tensor) -> Tensor:
        # J = √(1−ᾱ)·Σ_t⁻¹ is symmetric
        abar = self.world.sched.alpha_bar(t)
        flat, lead = _flat(self.world, cotangent)
        out = math.sqrt(1.0 - abar) * _solve(_noisy_cov(self.world, abar), flat)
        return out.reshape(lead + tuple(self.world.shape)).to(cotangent.dtype)
