from __future__ import annotations

import torch

from adir.denoiser import NetworkPredictor, eps_predict
from adir.ports import ClockPort, LoggerPort, NoisePredictor
from adir.testkit import CapturingLogger, FakeClock, texture_images, tiny_params


def test_fake_clock_advance_and_tick():
    clock = FakeClock()
    clock.advance(2.5)
    assert clock.monotonic() == 2.5

    ticking = FakeClock(tick=0.5)
    assert [ticking.monotonic() for _ in range(3)] == [0.0, 0.5, 1.0]


def test_capturing_logger_records_levels():
    logger = CapturingLogger()
    logger.debug("d", x=1)
    logger.info("i", k="v")
    logger.warning("w")
    logger.error("e", err="boom")

    assert [r["level"] for r in logger.records] == ["debug", "info", "warning", "error"]
    assert logger.messages() == ["d", "i", "w", "e"]
    assert logger.messages("warning") == ["w"]
    assert logger.records[-1]["err"] == "boom"


def test_fakes_satisfy_ports():
    assert isinstance(FakeClock(), ClockPort)
    assert isinstance(CapturingLogger(), LoggerPort)
    assert isinstance(NetworkPredictor(tiny_params()), NoisePredictor)


def test_tiny_params_predict_non_zero():
    params = tiny_params()
    x = torch.rand((1, 8, 8), dtype=torch.float64)
    assert eps_predict(params, x, 3).abs().sum() > 0


def test_texture_images_are_deterministic():
    a = texture_images(count=3, size=16, seed=5)
    b = texture_images(count=3, size=16, seed=5)
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    assert a[0].shape == (1, 16, 16)
