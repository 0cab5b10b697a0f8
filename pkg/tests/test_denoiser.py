from __future__ import annotations

import pytest
import torch

from adir.denoiser import (
    AdamState,
    DenoiserParams,
    TrainConfig,
    adam_step,
    batch_loss_gradient,
    ema_update,
    eps_predict,
    init_params,
    input_gradient,
    loss_gradient,
    train_prior,
)
from adir.diffusion import forward_sample
from adir.errors import DivergenceError, ParameterError, ShapeError
from adir.testkit import tiny_arch, tiny_params


def _image(seed: int, shape=(1, 4, 4)) -> torch.Tensor:
    return torch.rand(shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def _noise(seed: int, shape=(1, 4, 4)) -> torch.Tensor:
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_zero_output_layer_predicts_zero():
    params = init_params(tiny_arch(), seed=3, dtype=torch.float64)
    out = eps_predict(params, _noise(0), 5)
    assert out.shape == (1, 4, 4)
    assert torch.count_nonzero(out) == 0


def test_prediction_is_deterministic_and_batched():
    params = tiny_params()
    x = _noise(1, (3, 1, 6, 6))
    a = eps_predict(params, x, 4)
    b = eps_predict(params, x, 4)
    assert torch.equal(a, b)
    assert torch.allclose(eps_predict(params, x[1], 4), a[1], rtol=0, atol=1e-12)
    per_item = eps_predict(params, x, torch.tensor([1, 4, 9]))
    assert torch.allclose(per_item[1], a[1], rtol=0, atol=1e-12)


def test_fuzz_predictions_are_finite():
    gen = torch.Generator().manual_seed(9)
    for trial in range(100):
        params = tiny_params(seed=trial)
        x = torch.randn((1, 5, 7), generator=gen, dtype=torch.float64) * 3
        out = eps_predict(params, x, 1 + trial % 20)
        assert out.shape == x.shape
        assert torch.isfinite(out).all()


def test_channel_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        eps_predict(tiny_params(), torch.zeros((3, 4, 4), dtype=torch.float64), 1)


def test_final_bias_gradient_at_init(small_schedule):
    params = init_params(tiny_arch(), seed=0, dtype=torch.float64)
    eps = _noise(2)
    grads = loss_gradient(params, _image(1), 7, eps, small_schedule)
    assert torch.allclose(grads["out.bias"], -2.0 * eps.sum(dim=(1, 2)), rtol=1e-12, atol=1e-12)
    # the zero output layer blocks every upstream path
    assert torch.count_nonzero(grads["in.weight"]) == 0
    assert torch.count_nonzero(grads["block0.temb.bias"]) == 0


def _loss(params: DenoiserParams, x0, t, eps, sched) -> float:
    loss, _ = batch_loss_gradient(params, x0[None], torch.tensor([t]), eps[None], sched)
    return loss


def test_loss_gradient_matches_finite_differences(small_schedule):
    params = tiny_params(seed=1)
    x0, eps, t, h = _image(4), _noise(5), 6, 1e-5
    grads = loss_gradient(params, x0, t, eps, small_schedule)
    worst, scale = 0.0, 0.0
    for name, w in params.layers.items():
        flat = w.view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + h
            up = _loss(params, x0, t, eps, small_schedule)
            flat[i] = orig - h
            down = _loss(params, x0, t, eps, small_schedule)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - float(grads[name].view(-1)[i])))
            scale = max(scale, abs(fd))
    assert worst / scale <= 1e-6


def test_input_gradient_matches_finite_differences():
    params = tiny_params(seed=2)
    x, cot, t, h = _noise(6), _noise(7), 3, 1e-5
    g = input_gradient(params, x, t, cot)
    fd = torch.zeros_like(x)
    for i in range(x.numel()):
        up, down = x.clone(), x.clone()
        up.view(-1)[i] += h
        down.view(-1)[i] -= h
        fd.view(-1)[i] = float(((eps_predict(params, up, t) - eps_predict(params, down, t)) * cot).sum()) / (2 * h)
    assert float((g - fd).abs().max() / fd.abs().max()) <= 1e-6
    assert torch.count_nonzero(input_gradient(params, x, t, torch.zeros_like(x))) == 0
    with pytest.raises(ShapeError):
        input_gradient(params, x, t, cot[:, :2])


def _scalar_params(value) -> DenoiserParams:
    w = torch.as_tensor(value, dtype=torch.float64)
    return DenoiserParams(arch=tiny_arch(), layers={"w": w}, ema_shadow={"w": w.clone()})


def test_adam_matches_torch_optimizer():
    H = torch.tensor([[3.0, 0.5], [0.5, 1.0]], dtype=torch.float64)
    start = torch.tensor([1.0, -2.0], dtype=torch.float64)

    ref = start.clone().requires_grad_(True)
    opt = torch.optim.Adam([ref], lr=0.05, betas=(0.9, 0.999), eps=1e-8)
    params = _scalar_params(start)
    state = AdamState.zeros_like(params.layers)
    for _ in range(10):
        opt.zero_grad()
        (0.5 * ref @ H @ ref).backward()
        opt.step()
        params, state = adam_step(params, {"w": H @ params.layers["w"]}, 0.05, state)
    assert float((params.layers["w"] - ref.detach()).abs().max()) <= 1e-10
    assert params.step_count == 10
    assert state.step == 10


def test_adam_limits():
    params = _scalar_params([0.0])
    state = AdamState.zeros_like(params.layers)
    history = []
    for _ in range(50):
        params, state = adam_step(params, {"w": torch.tensor([2.0], dtype=torch.float64)}, 0.01, state)
        history.append(float(params.layers["w"]))
    assert all(b < a for a, b in zip([0.0] + history, history))
    assert history[-1] - history[-2] == pytest.approx(-0.01, rel=1e-6)

    m_before = state.m["w"].clone()
    params, state = adam_step(params, {"w": torch.zeros(1, dtype=torch.float64)}, 0.01, state)
    assert torch.all(state.m["w"].abs() < m_before.abs())
    # lr = 0 freezes the weights whatever the gradient
    frozen, _ = adam_step(params, {"w": torch.tensor([5.0], dtype=torch.float64)}, 0.0, state)
    assert torch.equal(frozen.layers["w"], params.layers["w"])


def test_adam_zero_gradient_from_rest():
    params = _scalar_params([1.5, -0.5])
    state = AdamState.zeros_like(params.layers)
    out, new_state = adam_step(params, {"w": torch.zeros(2, dtype=torch.float64)}, 0.1, state)
    assert torch.equal(out.layers["w"], params.layers["w"])
    assert torch.count_nonzero(new_state.v["w"]) == 0
    with pytest.raises(ShapeError):
        adam_step(params, {"v": torch.zeros(2)}, 0.1, state)


def test_ema_rate_zero_copies_weights():
    params = tiny_params()
    params.layers = {k: v + 1.0 for k, v in params.layers.items()}
    out = ema_update(params, 0.0)
    assert all(torch.equal(out.ema_shadow[k], params.layers[k]) for k in params.layers)
    with pytest.raises(ParameterError):
        ema_update(params, 1.0)


def test_ema_geometric_series():
    p = _scalar_params([2.0])
    p.ema_shadow = {"w": torch.tensor([-1.0], dtype=torch.float64)}
    p.ema_rate = 0.8
    for _ in range(7):
        p = ema_update(p)
    expected = -1.0 * 0.8**7 + 2.0 * (1 - 0.8**7)
    assert float(p.ema_shadow["w"]) == pytest.approx(expected, rel=1e-12)


def test_ema_tracks_scalar_recurrence_within_history_hull():
    gen = torch.Generator().manual_seed(0)
    seq = torch.randn(30, generator=gen, dtype=torch.float64)
    p = _scalar_params([float(seq[0])])
    p.ema_rate = 0.9
    ref = float(seq[0])
    for value in seq[1:]:
        p.layers = {"w": torch.tensor([float(value)], dtype=torch.float64)}
        p = ema_update(p)
        ref = 0.9 * ref + 0.1 * float(value)
        assert float(p.ema_shadow["w"]) == pytest.approx(ref, rel=1e-12, abs=1e-15)
        assert float(seq.min()) <= float(p.ema_shadow["w"]) <= float(seq.max())


def test_train_zero_iterations_returns_init(small_schedule, texture_images):
    cfg = TrainConfig(iterations=0, seed=4)
    result = train_prior(texture_images, cfg, small_schedule, arch=tiny_arch())
    init = init_params(tiny_arch(), seed=4, ema_rate=cfg.ema_rate)
    assert all(torch.equal(result.params.layers[k], init.layers[k]) for k in init.layers)
    assert result.loss_curve == []


def test_train_is_deterministic(small_schedule, texture_images):
    cfg = TrainConfig(iterations=5, batch_size=2, seed=1, learning_rate=1e-3)
    a = train_prior(texture_images, cfg, small_schedule, arch=tiny_arch())
    b = train_prior(texture_images, cfg, small_schedule, arch=tiny_arch())
    assert a.loss_curve == b.loss_curve
    assert all(torch.equal(a.params.layers[k], b.params.layers[k]) for k in a.params.layers)
    assert all(torch.equal(a.params.ema_shadow[k], b.params.ema_shadow[k]) for k in a.params.layers)
    assert a.params.step_count == 5


def test_training_descends(small_schedule, texture_images):
    cfg = TrainConfig(iterations=500, batch_size=8, seed=0, learning_rate=3e-3, log_every=100)
    result = train_prior(texture_images[:1], cfg, small_schedule, arch=tiny_arch())
    curve = result.loss_curve
    assert sum(curve[-100:]) / 100 < sum(curve[:100]) / 100


def test_train_rejects_empty_dataset(small_schedule):
    with pytest.raises(ParameterError):
        train_prior([], TrainConfig(iterations=1), small_schedule, arch=tiny_arch())


def test_non_finite_loss_raises_divergence(small_schedule, texture_images):
    init = tiny_params(dtype=torch.float32)
    init.layers["out.bias"] = torch.full_like(init.layers["out.bias"], float("nan"))
    with pytest.raises(DivergenceError):
        train_prior(texture_images, TrainConfig(iterations=3, batch_size=2), small_schedule, init=init)


def test_batch_loss_is_mean_of_single_losses(small_schedule):
    params = tiny_params(seed=3)
    x0 = torch.stack([_image(10), _image(11)])
    eps = torch.stack([_noise(12), _noise(13)])
    t = torch.tensor([2, 15])
    loss, _ = batch_loss_gradient(params, x0, t, eps, small_schedule)
    singles = []
    for i in range(2):
        x_t = forward_sample(x0[i], int(t[i]), eps[i], small_schedule)
        singles.append(float(((eps[i] - eps_predict(params, x_t, int(t[i]))) ** 2).sum()))
    assert loss == pytest.approx(sum(singles) / 2, rel=1e-12)
