"""
Shared diffusion mathematics: variance schedules, forward noising,
reverse-step statistics, x0 estimation and the simplified training loss.

Steps are 1-based (t = 1..T). Step 0 is the clean image with ᾱ_0 = 1.
Every function is pure; randomness only enters through explicit seeds or
`torch.Generator` objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from .errors import DegenerateStepError, ParameterError, ShapeError


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    TERMINAL_ONE = "terminal-one"


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """β/α/ᾱ sequences indexed 1..T (stored 0-based, float64)."""

    betas: Tensor
    alphas: Tensor
    alpha_bars: Tensor
    posterior_vars: Tensor

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def _check(self, t: int, lowest: int = 1) -> None:
        if not lowest <= t <= self.T:
            raise ParameterError(
                f"step {t} outside [{lowest}, {self.T}]", {"t": t, "T": self.T}
            )

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def posterior_var(self, t: int) -> float:
        self._check(t)
        return float(self.posterior_vars[t - 1])

    @classmethod
    def from_alpha_bars(cls, alpha_bars: Sequence[float] | Tensor) -> "DiffusionSchedule":
        abar = torch.as_tensor(alpha_bars, dtype=torch.float64).clone()
        prev = torch.cat([torch.ones(1, dtype=torch.float64), abar[:-1]])
        alphas = abar / prev
        betas = 1.0 - alphas
        return cls(betas, alphas, abar, _posterior_vars(betas, abar))

    def summary(self) -> dict:
        """T, kind and β endpoints; what a checkpoint records about its schedule."""
        terminal = self.T > 1 and float(self.betas[-1]) == 1.0
        kind = ScheduleKind.TERMINAL_ONE if terminal else ScheduleKind.LINEAR
        return {
            "T": self.T,
            "kind": kind.value,
            "beta_start": float(self.betas[0]),
            "beta_end": float(self.betas[-1]),
        }


def _posterior_vars(betas: Tensor, alpha_bars: Tensor) -> Tensor:
    prev = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bars[:-1]])
    one_minus = 1.0 - alpha_bars
    safe = torch.where(one_minus > 0, one_minus, torch.ones_like(one_minus))
    var = (1.0 - prev) / safe * betas
    # β̃_1 is defined as β_1
    var[0] = betas[0]
    return var


def linear_defaults(T: int) -> tuple[float, float]:
    """Standard linear endpoints (1e-4, 0.02) rescaled to a chain of T steps."""
    if T < 1:
        raise ParameterError("T must be >= 1", {"T": T})
    scale = 1000.0 / T
    # capped below 1 so a linear chain never reaches alpha = 0
    return min(1e-4 * scale, 0.999), min(0.02 * scale, 0.999)


def make_schedule(
    T: int,
    kind: ScheduleKind | str = ScheduleKind.LINEAR,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
) -> DiffusionSchedule:
    kind = ScheduleKind(kind)
    if T < 1:
        raise ParameterError("T must be >= 1", {"T": T})
    if not 0.0 < beta_start <= beta_end <= 1.0:
        raise ParameterError(
            "need 0 < beta_start <= beta_end <= 1",
            {"beta_start": beta_start, "beta_end": beta_end},
        )

    if kind is ScheduleKind.LINEAR:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    else:
        head = np.linspace(beta_start, beta_end, T - 1, dtype=np.float64)
        betas = np.concatenate([head, [1.0]])

    alphas = 1.0 - betas
    # accumulate in extended precision, expose float64
    alpha_bars = np.cumprod(alphas.astype(np.longdouble)).astype(np.float64)

    betas_t = torch.from_numpy(betas)
    abar_t = torch.from_numpy(alpha_bars)
    sched = DiffusionSchedule(
        betas=betas_t,
        alphas=torch.from_numpy(alphas),
        alpha_bars=abar_t,
        posterior_vars=_posterior_vars(betas_t, abar_t),
    )
    check_schedule(sched)
    return sched


def check_schedule(sched: DiffusionSchedule) -> None:
    b = sched.betas
    if not bool(torch.all(b > 0)) or not bool(torch.all(b <= 1)):
        raise ParameterError("betas must lie in (0, 1]")
    if not bool(torch.all(b[1:] >= b[:-1])):
        raise ParameterError("betas must be non-decreasing")
    if not bool(torch.all(sched.alpha_bars[1:] < sched.alpha_bars[:-1])):
        raise ParameterError("alpha_bars must be strictly decreasing")


def respace(sched: DiffusionSchedule, steps: int) -> tuple[DiffusionSchedule, tuple[int, ...]]:
    """
    Keep `steps` evenly spaced timesteps of `sched` (T is always kept).

    Returns the derived schedule over the kept steps and the map from its
    1-based indices to the original timesteps. Ancestral sampling on the
    derived schedule is the usual "timestep respacing" of DDPM samplers.
    """
    if not 1 <= steps <= sched.T:
        raise ParameterError(
            f"steps must lie in [1, {sched.T}]", {"steps": steps, "T": sched.T}
        )
    if steps == sched.T:
        return sched, tuple(range(1, sched.T + 1))
    grid = np.linspace(1.0, float(sched.T), steps) if steps > 1 else np.array([sched.T])
    kept = tuple(int(math.floor(v + 0.5)) for v in grid)
    abar = torch.stack([sched.alpha_bars[t - 1] for t in kept])
    return DiffusionSchedule.from_alpha_bars(abar), kept


# Noise -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseDraw:
    values: Tensor
    seed: int

    @classmethod
    def draw(
        cls,
        shape: Sequence[int],
        seed: int,
        dtype: torch.dtype = torch.float64,
    ) -> "NoiseDraw":
        gen = torch.Generator().manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
        return cls(torch.randn(tuple(shape), generator=gen, dtype=dtype), int(seed))


def _values(eps: NoiseDraw | Tensor) -> Tensor:
    return eps.values if isinstance(eps, NoiseDraw) else eps


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"{what}: shape mismatch",
            {"left": list(a.shape), "right": list(b.shape)},
        )


def _generator(rng: int | torch.Generator | None) -> torch.Generator | None:
    if rng is None or isinstance(rng, torch.Generator):
        return rng
    return torch.Generator().manual_seed(int(rng))


# Forward / reverse statistics -------------------------------------------------


def forward_sample(
    x0: Tensor, t: int, eps: NoiseDraw | Tensor, sched: DiffusionSchedule
) -> Tensor:
    noise = _values(eps)
    _same_shape(x0, noise, "forward_sample")
    abar = sched.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * noise


def posterior_mean(
    x_t: Tensor, eps_hat: Tensor, t: int, sched: DiffusionSchedule
) -> Tensor:
    _same_shape(x_t, eps_hat, "posterior_mean")
    abar = sched.alpha_bar(t)
    alpha = sched.alpha(t)
    if 1.0 - abar <= 0.0 or alpha <= 0.0:
        raise DegenerateStepError(
            "posterior mean undefined at this step", {"t": t, "alpha_bar": abar}
        )
    coef = (1.0 - alpha) / math.sqrt(1.0 - abar)
    return (x_t - coef * eps_hat) / math.sqrt(alpha)


def estimate_x0(
    x_t: Tensor, eps_hat: Tensor, t: int, sched: DiffusionSchedule
) -> Tensor:
    _same_shape(x_t, eps_hat, "estimate_x0")
    abar = sched.alpha_bar(t)
    if abar <= 0.0:
        raise DegenerateStepError(
            "cannot estimate x0 where alpha_bar = 0", {"t": t}
        )
    return (x_t - math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(abar)


def simple_loss(eps: NoiseDraw | Tensor, eps_pred: Tensor) -> float:
    """Squared L2 norm of (eps - eps_pred), summed over every entry."""
    noise = _values(eps)
    _same_shape(noise, eps_pred, "simple_loss")
    return float(torch.sum((noise - eps_pred) ** 2))


def ancestral_step(
    mean: Tensor, var_t: float, rng: int | torch.Generator | None = None
) -> Tensor:
    if var_t < 0:
        raise ParameterError("variance must be non-negative", {"var_t": var_t})
    if var_t == 0:
        return mean
    z = torch.randn(mean.shape, generator=_generator(rng), dtype=mean.dtype)
    return mean + math.sqrt(var_t) * z
