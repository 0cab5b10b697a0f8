"""
The learnable noise predictor ε_θ(x_t, t).

The network is a fixed residual convolutional stack with a sinusoidal
timestep embedding added inside every block. It is written as a pure
function of a flat, ordered dict of weight tensors so that prediction and
both gradient operations are reentrant: no module state is touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor
from tqdm.auto import tqdm

from .diffusion import DiffusionSchedule, NoiseDraw, forward_sample
from .errors import DivergenceError, ParameterError, ShapeError
from .ports import LoggerPort, NoisePredictor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

Layers = dict[str, Tensor]


class ArchConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    channels: int = Field(1, ge=1)
    hidden: int = Field(32, ge=1)
    blocks: int = Field(4, ge=0)
    embed_dim: int = Field(64, ge=2, multiple_of=2)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(1e-4, gt=0)
    ema_rate: float = Field(0.999, ge=0, lt=1)
    batch_size: int = Field(16, ge=1)
    iterations: int = Field(2000, ge=0)
    seed: int = 0
    log_every: int = Field(100, ge=1)


@dataclass(eq=False)
class DenoiserParams:
    """All learnable weights θ plus the EMA shadow set."""

    arch: ArchConfig
    layers: Layers
    ema_shadow: Layers
    step_count: int = 0
    ema_rate: float = 0.999
    provenance: dict[str, Any] = field(default_factory=dict)
    # schedule summary read from a checkpoint; empty for params built in memory
    schedule: dict[str, Any] = field(default_factory=dict)

    @property
    def dtype(self) -> torch.dtype:
        return next(iter(self.layers.values())).dtype

    def weights(self, use_ema: bool) -> Layers:
        return self.ema_shadow if use_ema else self.layers

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            arch=self.arch,
            layers={k: v.detach().clone() for k, v in self.layers.items()},
            ema_shadow={k: v.detach().clone() for k, v in self.ema_shadow.items()},
            step_count=self.step_count,
            ema_rate=self.ema_rate,
            provenance=dict(self.provenance),
            schedule=dict(self.schedule),
        )

    def to(self, dtype: torch.dtype) -> "DenoiserParams":
        out = self.copy()
        out.layers = {k: v.to(dtype) for k, v in out.layers.items()}
        out.ema_shadow = {k: v.to(dtype) for k, v in out.ema_shadow.items()}
        return out


@dataclass(eq=False)
class AdamState:
    m: Layers
    v: Layers
    step: int = 0

    @classmethod
    def zeros_like(cls, layers: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={k: torch.zeros_like(v) for k, v in layers.items()},
            v={k: torch.zeros_like(v) for k, v in layers.items()},
        )


@dataclass(eq=False)
class TrainResult:
    params: DenoiserParams
    loss_curve: list[float]


# Architecture ----------------------------------------------------------------


def layer_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    c, h, e = arch.channels, arch.hidden, arch.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        "in.weight": (h, c, 3, 3),
        "in.bias": (h,),
    }
    for i in range(arch.blocks):
        shapes[f"block{i}.conv1.weight"] = (h, h, 3, 3)
        shapes[f"block{i}.conv1.bias"] = (h,)
        shapes[f"block{i}.temb.weight"] = (h, e)
        shapes[f"block{i}.temb.bias"] = (h,)
        shapes[f"block{i}.conv2.weight"] = (h, h, 3, 3)
        shapes[f"block{i}.conv2.bias"] = (h,)
    shapes["out.weight"] = (c, h, 3, 3)
    shapes["out.bias"] = (c,)
    return shapes


def init_params(
    arch: ArchConfig | None = None,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    ema_rate: float = 0.999,
) -> DenoiserParams:
    """He fan-in initialisation; the output layer starts at zero so ε_θ ≡ 0."""
    arch = arch or ArchConfig()
    gen = torch.Generator().manual_seed(int(seed))
    layers: Layers = {}
    for name, shape in layer_shapes(arch).items():
        if name.endswith(".bias") or name.startswith("out."):
            layers[name] = torch.zeros(shape, dtype=torch.float64)
            continue
        fan_in = math.prod(shape[1:])
        std = math.sqrt(2.0 / fan_in)
        layers[name] = torch.randn(shape, generator=gen, dtype=torch.float64) * std
    layers = {k: v.to(dtype) for k, v in layers.items()}
    return DenoiserParams(
        arch=arch,
        layers=layers,
        ema_shadow={k: v.clone() for k, v in layers.items()},
        ema_rate=ema_rate,
    )


def timestep_embedding(t: Tensor, dim: int) -> Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    )
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _forward(layers: Mapping[str, Tensor], arch: ArchConfig, x: Tensor, t: Tensor) -> Tensor:
    emb = timestep_embedding(t, arch.embed_dim).to(x.dtype)
    h = F.conv2d(x, layers["in.weight"], layers["in.bias"], padding=1)
    for i in range(arch.blocks):
        p = f"block{i}."
        r = F.conv2d(F.silu(h), layers[p + "conv1.weight"], layers[p + "conv1.bias"], padding=1)
        r = r + F.linear(F.silu(emb), layers[p + "temb.weight"], layers[p + "temb.bias"])[
            :, :, None, None
        ]
        r = F.conv2d(F.silu(r), layers[p + "conv2.weight"], layers[p + "conv2.bias"], padding=1)
        h = h + r
    return F.conv2d(F.silu(h), layers["out.weight"], layers["out.bias"], padding=1)


def _as_batch(x: Tensor, t: int | Tensor, arch: ArchConfig) -> tuple[Tensor, Tensor, bool]:
    if x.dim() not in (3, 4):
        raise ShapeError("expected (C,H,W) or (B,C,H,W)", {"shape": list(x.shape)})
    single = x.dim() == 3
    xb = x.unsqueeze(0) if single else x
    if xb.shape[1] != arch.channels:
        raise ShapeError(
            "channel count does not match the architecture",
            {"channels": int(xb.shape[1]), "expected": arch.channels},
        )
    tb = torch.as_tensor(t, dtype=torch.int64).reshape(-1)
    if tb.numel() == 1:
        tb = tb.expand(xb.shape[0])
    if tb.numel() != xb.shape[0]:
        raise ShapeError("one timestep per batch item", {"t": tb.numel(), "batch": int(xb.shape[0])})
    return xb, tb, single


# Prediction and gradients ----------------------------------------------------


def eps_predict(
    params: DenoiserParams, x_t: Tensor, t: int | Tensor, use_ema: bool = False
) -> Tensor:
    layers = params.weights(use_ema)
    xb, tb, single = _as_batch(x_t, t, params.arch)
    with torch.no_grad():
        out = _forward(layers, params.arch, xb.to(params.dtype), tb).to(x_t.dtype)
    return out[0] if single else out


def _leaves(layers: Mapping[str, Tensor]) -> Layers:
    return {k: v.detach().clone().requires_grad_(True) for k, v in layers.items()}


def _grads(loss: Tensor, leaves: Layers) -> Layers:
    raw = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    return {
        k: (g if g is not None else torch.zeros_like(leaves[k]))
        for k, g in zip(leaves, raw)
    }


def batch_loss_gradient(
    params: DenoiserParams,
    x0: Tensor,
    t: Tensor,
    eps: Tensor,
    sched: DiffusionSchedule,
) -> tuple[float, Layers]:
    """
    Mean over the batch of per-sample ℓ_simple and its gradient.

    `x0`, `eps` are (B, C, H, W); `t` holds one step per sample.
    """
    if x0.shape != eps.shape:
        raise ShapeError("x0 and eps differ", {"x0": list(x0.shape), "eps": list(eps.shape)})
    xb, tb, _ = _as_batch(x0, t, params.arch)
    noise = eps.reshape(xb.shape).to(params.dtype)
    x_t = torch.stack(
        [forward_sample(xb[i].to(params.dtype), int(tb[i]), noise[i], sched) for i in range(xb.shape[0])]
    )
    leaves = _leaves(params.layers)
    with torch.enable_grad():
        pred = _forward(leaves, params.arch, x_t, tb)
        per_sample = ((noise - pred) ** 2).flatten(1).sum(dim=1)
        loss = per_sample.mean()
        grads = _grads(loss, leaves)
    return float(loss.detach()), grads


def loss_gradient(
    params: DenoiserParams,
    x0: Tensor,
    t: int,
    eps: NoiseDraw | Tensor,
    sched: DiffusionSchedule,
) -> Layers:
    """∂ℓ_simple/∂θ for a single (x0, t, ε) triple."""
    noise = eps.values if isinstance(eps, NoiseDraw) else eps
    if x0.shape != noise.shape:
        raise ShapeError("x0 and eps differ", {"x0": list(x0.shape), "eps": list(noise.shape)})
    _, grads = batch_loss_gradient(
        params, x0.unsqueeze(0), torch.tensor([t]), noise.unsqueeze(0), sched
    )
    return grads


def input_gradient(
    params: DenoiserParams,
    x_t: Tensor,
    t: int | Tensor,
    cotangent: Tensor,
    use_ema: bool = False,
) -> Tensor:
    """Jᵀ·cotangent where J = ∂eps_predict/∂x_t."""
    if cotangent.shape != x_t.shape:
        raise ShapeError(
            "cotangent must match x_t",
            {"x_t": list(x_t.shape), "cotangent": list(cotangent.shape)},
        )
    layers = params.weights(use_ema)
    xb, tb, single = _as_batch(x_t, t, params.arch)
    with torch.enable_grad():
        x = xb.detach().to(params.dtype).requires_grad_(True)
        out = _forward(layers, params.arch, x, tb)
        cot = cotangent.reshape(out.shape).to(params.dtype)
        (g,) = torch.autograd.grad(out, x, grad_outputs=cot)
    g = g.to(x_t.dtype)
    return g[0] if single else g


# Optimisation ----------------------------------------------------------------


def adam_step(
    params: DenoiserParams,
    grads: Mapping[str, Tensor],
    lr: float,
    state: AdamState,
) -> tuple[DenoiserParams, AdamState]:
    """Bias-corrected Adam (β₁=0.9, β₂=0.999, ε=1e-8); inputs are not mutated."""
    if lr < 0:
        raise ParameterError("learning rate must be non-negative", {"lr": lr})
    if set(grads) != set(params.layers):
        raise ShapeError("gradient set does not match layers")
    step = state.step + 1
    bc1 = 1.0 - ADAM_BETA1**step
    bc2 = 1.0 - ADAM_BETA2**step
    layers: Layers = {}
    m_new: Layers = {}
    v_new: Layers = {}
    with torch.no_grad():
        for name, w in params.layers.items():
            g = grads[name].to(w.dtype)
            m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            layers[name] = w - lr * m_hat / (torch.sqrt(v_hat) + ADAM_EPS)
            m_new[name] = m
            v_new[name] = v
    updated = replace(params, layers=layers, step_count=params.step_count + 1)
    return updated, AdamState(m=m_new, v=v_new, step=step)


def ema_update(params: DenoiserParams, rate: Optional[float] = None) -> DenoiserParams:
    r = params.ema_rate if rate is None else rate
    if not 0.0 <= r < 1.0:
        raise ParameterError("ema rate must lie in [0, 1)", {"rate": r})
    with torch.no_grad():
        shadow = {
            k: r * params.ema_shadow[k] + (1.0 - r) * w for k, w in params.layers.items()
        }
    return replace(params, ema_shadow=shadow)


def _stack(images: Sequence[Tensor] | Tensor) -> Tensor:
    if isinstance(images, Tensor):
        return images if images.dim() == 4 else images.unsqueeze(0)
    if len(images) == 0:
        raise ParameterError("dataset is empty")
    return torch.stack(list(images))


def fit(
    params: DenoiserParams,
    batches: Iterable[tuple[Tensor, Tensor, Tensor]],
    sched: DiffusionSchedule,
    lr: float,
    iterations: int,
    logger: Optional[LoggerPort] = None,
    log_every: int = 100,
    progress: bool = False,
    desc: str = "train",
) -> TrainResult:
    """
    Shared Adam + EMA loop: one (x0, t, eps) batch per iteration.
    """
    state = AdamState.zeros_like(params.layers)
    curve: list[float] = []
    it = iter(batches)
    for i in tqdm(range(iterations), desc=desc, disable=not progress, leave=False):
        x0, t, eps = next(it)
        loss, grads = batch_loss_gradient(params, x0, t, eps, sched)
        if not math.isfinite(loss):
            raise DivergenceError("training loss became non-finite", {"iteration": i})
        params, state = adam_step(params, grads, lr, state)
        params = ema_update(params)
        curve.append(loss)
        if logger is not None and (i + 1) % log_every == 0:
            logger.info(desc, iteration=i + 1, loss=loss)
    return TrainResult(params=params, loss_curve=curve)


def train_prior(
    dataset: Sequence[Tensor] | Tensor,
    cfg: TrainConfig,
    sched: DiffusionSchedule,
    arch: ArchConfig | None = None,
    init: DenoiserParams | None = None,
    logger: Optional[LoggerPort] = None,
    progress: bool = False,
) -> TrainResult:
    """Uniform t per sample, fresh ε per sample, Adam then EMA every iteration."""
    data = _stack(dataset)
    if data.shape[0] == 0:
        raise ParameterError("dataset is empty")
    if init is None:
        arch = arch or ArchConfig(channels=int(data.shape[1]))
        params = init_params(arch, seed=cfg.seed, ema_rate=cfg.ema_rate)
    else:
        params = replace(init.copy(), ema_rate=cfg.ema_rate)
    data = data.to(params.dtype)
    gen = torch.Generator().manual_seed(int(cfg.seed) + 1)

    def batches():
        while True:
            idx = torch.randint(data.shape[0], (cfg.batch_size,), generator=gen)
            t = torch.randint(1, sched.T + 1, (cfg.batch_size,), generator=gen)
            x0 = data[idx]
            eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
            yield x0, t, eps

    if logger is not None:
        logger.info(
            "training prior",
            images=int(data.shape[0]),
            iterations=cfg.iterations,
            batch_size=cfg.batch_size,
        )
    return fit(
        params,
        batches(),
        sched,
        cfg.learning_rate,
        cfg.iterations,
        logger=logger,
        log_every=cfg.log_every,
        progress=progress,
        desc="train",
    )


class NetworkPredictor(NoisePredictor):
    """NoisePredictor backed by DenoiserParams (EMA weights by default)."""

    def __init__(self, params: DenoiserParams, use_ema: bool = True) -> None:
        self.params = params
        self.use_ema = use_ema

    def predict(self, x_t: Tensor, t: int) -> Tensor:
        return eps_predict(self.params, x_t, t, use_ema=self.use_ema)

    def vjp(self, x_t: Tensor, t: int, cotangent: Tensor) -> Tensor:
        return input_gradient(self.params, x_t, t, cotangent, use_ema=self.use_ema)
