from __future__ import annotations

import pytest
import torch

from adir.diffusion import forward_sample, posterior_mean
from adir.errors import ParameterError, ShapeError
from adir.imageio import save_array_text
from adir.oracle import (
    GaussianPredictor,
    GaussianWorld,
    conditional_moments,
    load_world,
    marginal_moments,
    optimal_eps,
    posterior_moments,
    random_operator,
    random_world,
    sample_prior,
)
from adir.testkit import small_schedule


@pytest.fixture
def world():
    return random_world(6, small_schedule(), seed=1)


def _randn(shape, seed):
    return torch.randn(tuple(shape), generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_world_validation():
    sched = small_schedule()
    with pytest.raises(ParameterError):
        GaussianWorld(m0=torch.zeros(2), C0=torch.tensor([[1.0, 0.5], [0.0, 1.0]]), shape=(1, 1, 2), sched=sched)
    with pytest.raises(ParameterError):
        GaussianWorld(m0=torch.zeros(2), C0=-torch.eye(2), shape=(1, 1, 2), sched=sched)
    with pytest.raises(ShapeError):
        GaussianWorld(m0=torch.zeros(3), C0=torch.eye(3), shape=(1, 2, 2), sched=sched)
    with pytest.raises(ParameterError):
        random_world(65, sched)


def test_marginal_moments_at_zero_are_the_prior(world):
    mean, cov = marginal_moments(world, 0)
    assert torch.equal(mean, world.m0)
    assert torch.allclose(cov, world.C0, atol=0)


def test_optimal_eps_matches_direct_inverse(world):
    t = 7
    abar = world.sched.alpha_bar(t)
    x_t = _randn((3,) + world.shape, 2)
    sigma = abar * world.C0 + (1 - abar) * torch.eye(world.n, dtype=torch.float64)
    direct = (1 - abar) ** 0.5 * (x_t.reshape(3, -1) - abar**0.5 * world.m0) @ torch.linalg.inv(sigma).T
    assert torch.allclose(optimal_eps(world, x_t, t).reshape(3, -1), direct, atol=1e-10)


def test_optimal_eps_is_the_mmse_noise_estimate(world):
    # E[eps | x_t] from a large joint sample agrees with the closed form
    t = 10
    gen = torch.Generator().manual_seed(3)
    x0 = sample_prior(world, 20000, gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
    x_t = forward_sample(x0, t, eps, world.sched)
    pred = optimal_eps(world, x_t, t)
    # regression residual is orthogonal to x_t
    resid = (eps - pred).reshape(20000, -1)
    cross = resid.T @ x_t.reshape(20000, -1) / 20000
    assert float(cross.abs().max()) < 0.05


def test_optimal_eps_undefined_at_step_zero(world):
    with pytest.raises(ParameterError):
        optimal_eps(world, _randn(world.shape, 0), 0)


def test_conditional_mean_is_consistent_with_optimal_eps(world):
    t = 5
    x_t = _randn(world.shape, 4)
    mean, cov = conditional_moments(world, x_t, t)
    abar = world.sched.alpha_bar(t)
    x0_hat = (x_t - (1 - abar) ** 0.5 * optimal_eps(world, x_t, t)) / abar**0.5
    assert torch.allclose(mean, x0_hat, atol=1e-10)
    assert torch.allclose(cov, cov.T, atol=0)
    assert float(torch.linalg.eigvalsh(cov).min()) > 0


def test_posterior_moments_against_information_form(world):
    A = random_operator(3, world, seed=5)
    M = A.matrix
    sigma = 0.2
    y = _randn(A.output_shape, 6)
    mean, cov = posterior_moments(world, A, sigma, y)
    precision = torch.linalg.inv(world.C0) + M.T @ M / sigma**2
    cov_ref = torch.linalg.inv(precision)
    mean_ref = cov_ref @ (torch.linalg.solve(world.C0, world.m0) + M.T @ y.reshape(-1) / sigma**2)
    assert torch.allclose(cov, cov_ref, atol=1e-10)
    assert torch.allclose(mean.reshape(-1), mean_ref, atol=1e-10)


def test_posterior_moments_noise_free(world):
    A = random_operator(3, world, seed=5)
    x = sample_prior(world, 1, torch.Generator().manual_seed(7))[0]
    mean, cov = posterior_moments(world, A, 0.0, A.apply(x))
    # the posterior mean reproduces the observation exactly
    assert torch.allclose(A.apply(mean), A.apply(x), atol=1e-10)
    assert float(torch.linalg.eigvalsh(cov).min()) > -1e-10


def test_posterior_moments_rejects_bad_inputs(world):
    A = random_operator(3, world, seed=5)
    with pytest.raises(ParameterError):
        posterior_moments(world, A, -1.0, torch.zeros(A.output_shape))
    with pytest.raises(ShapeError):
        posterior_moments(world, A, 0.1, torch.zeros(4))
    with pytest.raises(ParameterError):
        posterior_moments(world, torch.zeros(3, world.n), 0.0, torch.zeros(3))


def test_gaussian_predictor_vjp_matches_finite_differences(world):
    predictor = GaussianPredictor(world)
    t = 8
    x = _randn(world.shape, 8)
    v = _randn(world.shape, 9)
    got = predictor.vjp(x, t, v).reshape(-1)
    h = 1e-6
    expected = torch.zeros(world.n, dtype=torch.float64)
    for i in range(world.n):
        e = torch.zeros(world.n, dtype=torch.float64)
        e[i] = h
        e = e.reshape(world.shape)
        d = (predictor.predict(x + e, t) - predictor.predict(x - e, t)) / (2 * h)
        expected[i] = float((d * v).sum())
    assert torch.allclose(got, expected, atol=1e-7)


def test_mmse_reverse_step_keeps_the_mean_on_track(world):
    # one reverse step with the exact predictor maps the marginal mean at t onto the one at t-1
    t = 12
    gen = torch.Generator().manual_seed(10)
    x0 = sample_prior(world, 40000, gen)
    x_t = forward_sample(x0, t, torch.randn(x0.shape, generator=gen, dtype=torch.float64), world.sched)
    mu = posterior_mean(x_t, optimal_eps(world, x_t, t), t, world.sched)
    expected, _ = marginal_moments(world, t - 1)
    assert torch.allclose(mu.reshape(40000, -1).mean(dim=0), expected, atol=0.03)


def test_load_world_round_trip(tmp_path, world):
    save_array_text(world.m0, tmp_path / "m0.txt")
    save_array_text(world.C0, tmp_path / "C0.txt")
    loaded, A = load_world(tmp_path, world.sched)
    assert A is None
    assert torch.allclose(loaded.C0, world.C0, atol=0)
    mat = random_operator(2, world, seed=1).matrix
    save_array_text(mat, tmp_path / "A.txt")
    _, A = load_world(tmp_path, world.sched)
    assert A is not None and A.output_shape == (1, 1, 2)
    assert torch.allclose(A.matrix, mat, atol=0)
