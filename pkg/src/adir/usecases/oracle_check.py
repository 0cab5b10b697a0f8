"""
Acceptance battery on a linear-Gaussian world.

Every check has a closed-form reference: the surrogate identity, the
calibration of unconditional sampling with the MMSE predictor, and the
quality of guided reconstructions against the exact Bayes posterior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import torch

from ..config import RunConfig
from ..diffusion import DiffusionSchedule, estimate_x0, linear_defaults, make_schedule
from ..errors import DivergenceError
from ..operators import LinearOperator, degrade
from ..oracle import (
    GaussianPredictor,
    GaussianWorld,
    load_world,
    marginal_moments,
    posterior_moments,
    random_operator,
    random_world,
    sample_prior,
)
from ..sampler import (
    GuidanceConfig,
    GuidanceFn,
    noised_observation,
    reconstruct,
    sample_unconditional,
)
from ..types import to_serializable
from ..use_case import UseCase

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"


@dataclass
class CheckResult:
    name: str
    status: str
    value: float
    threshold: float
    detail: dict[str, Any] = field(default_factory=dict)


@dataclass
class OracleReport:
    checks: list[CheckResult]
    best_scale: Optional[float] = None
    json_path: Optional[Path] = None

    @property
    def passed(self) -> bool:
        return all(c.status != FAIL for c in self.checks)


@dataclass
class OracleInput:
    config: RunConfig
    out_dir: Optional[Path] = None
    world_dir: Optional[Path] = None
    guidance_fn: Optional[GuidanceFn] = None
    identity_trials: int = 200


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def check_surrogate_identity(
    sched: DiffusionSchedule, A: LinearOperator, trials: int, gen: torch.Generator
) -> CheckResult:
    """‖A·x̂₀ − y‖² = ‖A·x_t − y_t‖²/ᾱ_t for random states and noise estimates."""
    worst = 0.0
    for _ in range(trials):
        t = int(torch.randint(1, sched.T + 1, (1,), generator=gen))
        x_t = torch.randn(A.input_shape, generator=gen, dtype=torch.float64)
        eps = torch.randn(A.input_shape, generator=gen, dtype=torch.float64)
        y = torch.randn(A.output_shape, generator=gen, dtype=torch.float64)
        lhs = float(((A.apply(estimate_x0(x_t, eps, t, sched)) - y) ** 2).sum())
        y_t = noised_observation(y, eps, A, t, sched)
        rhs = float(((A.apply(x_t) - y_t) ** 2).sum()) / sched.alpha_bar(t)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    return CheckResult("surrogate_identity", _status(worst <= 1e-8), worst, 1e-8, {"trials": trials})


def check_calibration(world: GaussianWorld, chains: int, seed: int) -> list[CheckResult]:
    samples = sample_unconditional(GaussianPredictor(world), world.sched, world.shape, seed=seed, num_samples=chains)
    flat = samples.reshape(chains, -1)
    mean_ref, cov_ref = marginal_moments(world, 0)
    stderr = torch.sqrt(torch.diagonal(cov_ref) / chains)
    z = float(((flat.mean(dim=0) - mean_ref).abs() / stderr).max())
    cov = torch.cov(flat.T)
    frob = float(torch.linalg.matrix_norm(cov - cov_ref) / torch.linalg.matrix_norm(cov_ref))
    return [
        CheckResult("calibration_mean", _status(z <= 4.0), z, 4.0, {"chains": chains}),
        CheckResult("calibration_covariance", _status(frob <= 0.10), frob, 0.10, {"chains": chains}),
    ]


def check_posterior(
    world: GaussianWorld,
    A: LinearOperator,
    sigma: float,
    scales: list[float],
    samples: int,
    truths: int,
    seed: int,
    guidance_fn: Optional[GuidanceFn] = None,
) -> tuple[list[CheckResult], Optional[float]]:
    positive = [s for s in scales if s > 0]
    if not positive:
        detail = {"reason": "no positive guidance scale"}
        return [
            CheckResult("posterior_mean", SKIPPED, math.nan, 0.5, detail),
            CheckResult("posterior_mse", SKIPPED, math.nan, 2.0, detail),
        ], None

    predictor = GaussianPredictor(world)
    gen = torch.Generator().manual_seed(seed)
    x_true = sample_prior(world, truths, gen)
    dist_unc = 0.0
    dist = {s: 0.0 for s in positive}
    err = {s: 0.0 for s in positive}
    mmse = 0.0
    for j in range(truths):
        obs = degrade(x_true[j], A, sigma, seed=seed + 100 + j)
        m_post, c_post = posterior_moments(world, A, sigma, obs.y)
        mmse += float(torch.trace(c_post))
        chain_seed = seed + 1000 + j
        uncond = sample_unconditional(predictor, world.sched, world.shape, seed=chain_seed, num_samples=samples)
        dist_unc += float(torch.linalg.vector_norm(uncond.mean(dim=0) - m_post))
        for s in positive:
            cfg = GuidanceConfig(s=s, seed=chain_seed, num_samples=samples)
            try:
                x, _ = reconstruct(obs, predictor, world.sched, cfg, guidance_fn=guidance_fn)
            except DivergenceError:
                dist[s] = err[s] = math.inf
                continue
            dist[s] += float(torch.linalg.vector_norm(x.mean(dim=0) - m_post))
            # per-sample squared error, averaged over the draws
            err[s] += float(((x - x_true[j]) ** 2).flatten(1).sum(dim=1).mean())

    best = min(positive, key=lambda s: dist[s])
    ratio = dist[best] / dist_unc if dist_unc > 0 else math.inf
    mse_ratio = err[best] / mmse if mmse > 0 else math.inf
    detail = {
        "scale": best,
        "truths": truths,
        "samples": samples,
        "distance_guided": dist[best] / truths,
        "distance_unconditional": dist_unc / truths,
        "per_scale": {str(s): dist[s] / truths for s in positive},
    }
    return [
        CheckResult("posterior_mean", _status(ratio <= 0.5), ratio, 0.5, detail),
        CheckResult(
            "posterior_mse",
            _status(mse_ratio <= 2.0),
            mse_ratio,
            2.0,
            {"scale": best, "mse": err[best] / truths, "mmse": mmse / truths},
        ),
    ], best


class OracleCheck(UseCase[OracleInput, OracleReport]):
    name = "oracle_check"

    def perform(self, input: OracleInput) -> OracleReport:
        ocfg = input.config.oracle
        sched = make_schedule(ocfg.T, "linear", *linear_defaults(ocfg.T))
        A: Optional[LinearOperator] = None
        if input.world_dir is not None:
            world, A = load_world(input.world_dir, sched)
        else:
            world = random_world(ocfg.n, sched, seed=ocfg.seed)
        if A is None:
            A = random_operator(ocfg.m, world, seed=ocfg.seed + 1)
        gen = torch.Generator().manual_seed(ocfg.seed + 2)

        checks = [check_surrogate_identity(world.sched, A, input.identity_trials, gen)]
        checks += check_calibration(world, ocfg.chains, ocfg.seed + 3)
        posterior, best = check_posterior(
            world, A, ocfg.sigma, list(ocfg.scales), ocfg.samples, ocfg.truths, ocfg.seed + 4, input.guidance_fn
        )
        checks += posterior
        report = OracleReport(checks=checks, best_scale=best)
        for c in checks:
            self.logger.info("oracle check", name=c.name, status=c.status, value=c.value)
        if input.out_dir is not None:
            input.out_dir.mkdir(parents=True, exist_ok=True)
            report.json_path = input.out_dir / "oracle.json"
            payload = {"passed": report.passed, **to_serializable(report)}
            report.json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return report
