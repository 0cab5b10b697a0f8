from __future__ import annotations

import csv
import json
import re
import shutil
from pathlib import Path

import pytest
import torch

from adir.adaptation import AdaptConfig
from adir.checkpoint import load_checkpoint
from adir.config import Method, build_config, parse_config_text
from adir.errors import NotFound, ParameterError, ShapeError
from adir.imageio import read_image, save_array_text, write_image
from adir.operators import DEBLUR_SIGMA, Task
from adir.result import Err, Ok
from adir.sampler import guidance_gradient
from adir.testkit import CapturingLogger, FakeClock, tiny_config, tiny_config_text
from adir.usecases import (
    AdaptDenoiser,
    AdaptInput,
    EvalInput,
    EvaluateReconstructions,
    GenDataInput,
    GenerateData,
    IngestCorpus,
    IngestInput,
    OracleCheck,
    OracleInput,
    ReconstructImage,
    ReconstructInput,
    RetrieveInput,
    RetrieveNeighbors,
    TrainInput,
    TrainPrior,
)
from adir.usecases.common import image_seed, task_operator
from adir.usecases.oracle_check import FAIL, PASS, SKIPPED


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated corpus, trained tiny prior and index shared by the workflow tests."""
    root = tmp_path_factory.mktemp("ws")
    cfg = tiny_config(root)
    logger = CapturingLogger()
    GenerateData(logger=logger).execute(GenDataInput(cfg, cfg.train_dir)).unwrap()
    GenerateData(logger=logger).execute(GenDataInput(cfg, cfg.corpus_dir, seed=1)).unwrap()
    trained = TrainPrior(logger=logger).execute(TrainInput(cfg, root / "prior.ckpt")).unwrap()
    IngestCorpus(logger=logger).execute(IngestInput(cfg)).unwrap()
    return root, cfg, trained


def test_gen_data_textures(tmp_path):
    cfg = tiny_config(tmp_path)
    out = GenerateData(logger=CapturingLogger()).execute(GenDataInput(cfg, tmp_path / "d", count=4)).unwrap()
    assert [p.name for p in out.files] == [f"tex_{i:05d}.png" for i in range(4)]
    assert out.clusters == [0, 1, 0, 1]
    with (tmp_path / "d" / "clusters.csv").open() as fh:
        assert list(csv.reader(fh))[1] == ["tex_00000.png", "0"]
    assert read_image(out.files[0]).shape == (1, 16, 16)


def test_gen_data_gaussians_and_edge_counts(tmp_path):
    cfg = tiny_config(tmp_path)
    logger = CapturingLogger()
    out = GenerateData(logger=logger).execute(GenDataInput(cfg, tmp_path / "g", kind="gaussians", count=5)).unwrap()
    assert [p.name for p in out.files] == ["m0.txt", "C0.txt", "samples.txt"]

    empty = GenerateData(logger=logger).execute(GenDataInput(cfg, tmp_path / "e", count=0)).unwrap()
    assert empty.files == []
    assert "count is 0; nothing generated" in logger.messages("warning")

    res = GenerateData(logger=logger).execute(GenDataInput(cfg, tmp_path / "n", count=-1))
    assert isinstance(res.err, ParameterError)


def test_train_writes_checkpoint_and_loss_curve(workspace):
    root, cfg, trained = workspace
    assert trained.checkpoint.exists()
    assert len(trained.loss_curve) == 3
    assert len(trained.digest) == 64
    with trained.loss_csv.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "loss"]
    assert len(rows) == 4
    params = load_checkpoint(trained.checkpoint)
    assert params.step_count == 3
    assert params.schedule["T"] == 20
    assert "schedule" not in params.provenance
    assert params.provenance["images"] == 6


def test_train_requires_the_data_directory(tmp_path):
    cfg = tiny_config(tmp_path)
    res = TrainPrior(logger=CapturingLogger()).execute(TrainInput(cfg, tmp_path / "p.ckpt"))
    assert isinstance(res.err, NotFound)
    assert res.err.details["key"] == "train_dir"


def test_ingest_is_idempotent(workspace):
    _, cfg, _ = workspace
    logger = CapturingLogger()
    index = IngestCorpus(logger=logger).execute(IngestInput(cfg)).unwrap()
    assert len(index) == 6
    assert logger.messages("info") == ["index up to date"]


def test_retrieve_writes_a_manifest(workspace, tmp_path):
    root, cfg, _ = workspace
    manifest = tmp_path / "neighbors.csv"
    query = cfg.corpus_dir / "tex_00002.png"
    got = RetrieveNeighbors(logger=CapturingLogger()).execute(RetrieveInput(cfg, query, K=2, manifest=manifest)).unwrap()
    assert len(got) == 2
    assert got[0].path == "tex_00002.png"
    with manifest.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["rank", "path", "distance"]
    assert rows[1][:2] == ["1", "tex_00002.png"]


def test_retrieve_without_index(tmp_path):
    cfg = tiny_config(tmp_path)
    res = RetrieveNeighbors(logger=CapturingLogger()).execute(RetrieveInput(cfg, torch.rand(1, 8, 8)))
    assert isinstance(res.err, NotFound)


@pytest.mark.parametrize("method", list(Method))
def test_reconstruct_from_truth(workspace, tmp_path, method):
    root, cfg, trained = workspace
    truth = cfg.train_dir / "tex_00001.png"
    out = (
        ReconstructImage(clock=FakeClock(tick=0.25), logger=CapturingLogger())
        .execute(ReconstructInput(cfg, trained.checkpoint, tmp_path, method=method, truth=truth))
        .unwrap()
    )
    assert out.image.shape == (1, 16, 16)
    assert read_image(out.image_path).shape == (1, 16, 16)
    assert read_image(out.observation_path).shape == (1, 8, 8)
    assert len(out.trace) == 5
    assert out.seed == image_seed(cfg.seed, "tex_00001.png")
    assert out.trace_path.exists()
    adapt_csv = tmp_path / "tex_00001.adapt.csv"
    neighbors_csv = tmp_path / "tex_00001.neighbors.csv"
    assert adapt_csv.exists() == (method is not Method.BASELINE)
    assert neighbors_csv.exists() == (method is Method.ADIR)
    if method is Method.ADIR:
        assert len(out.neighbors) == 3


def test_reconstruct_is_deterministic(workspace, tmp_path):
    _, cfg, trained = workspace
    truth = cfg.train_dir / "tex_00003.png"
    a = ReconstructImage(logger=CapturingLogger()).execute(
        ReconstructInput(cfg, trained.checkpoint, tmp_path / "a", truth=truth)
    ).unwrap()
    b = ReconstructImage(logger=CapturingLogger()).execute(
        ReconstructInput(cfg, trained.checkpoint, tmp_path / "b", truth=truth)
    ).unwrap()
    assert torch.equal(a.image, b.image)
    assert a.image_path.read_bytes() == b.image_path.read_bytes()


def test_adir_without_adaptation_matches_the_baseline(workspace, tmp_path):
    _, cfg, trained = workspace
    frozen = cfg.model_copy(update={"adapt": AdaptConfig(iterations=0, batch_size=2)})
    assert frozen.adapt_for(Method.ADIR).iterations == 0
    truth = cfg.train_dir / "tex_00004.png"
    adir = ReconstructImage(logger=CapturingLogger()).execute(
        ReconstructInput(frozen, trained.checkpoint, tmp_path / "adir", method=Method.ADIR, truth=truth)
    ).unwrap()
    base = ReconstructImage(logger=CapturingLogger()).execute(
        ReconstructInput(frozen, trained.checkpoint, tmp_path / "base", method=Method.BASELINE, truth=truth)
    ).unwrap()
    assert len(adir.neighbors) == 3
    assert torch.equal(adir.image, base.image)
    assert adir.image_path.read_bytes() == base.image_path.read_bytes()



def test_reconstruct_from_observation(workspace, tmp_path):
    _, cfg, trained = workspace
    y = read_image(cfg.train_dir / "tex_00000.png")[:, ::2, ::2].contiguous()
    obs_path = write_image(y, tmp_path / "obs" / "img.png")
    out = ReconstructImage(logger=CapturingLogger()).execute(
        ReconstructInput(cfg, trained.checkpoint, tmp_path / "out", observation=obs_path)
    ).unwrap()
    assert out.observation_path is None
    assert out.image.shape == (1, 16, 16)


def test_reconstruct_input_checks(workspace, tmp_path):
    _, cfg, trained = workspace
    res = ReconstructImage(logger=CapturingLogger()).execute(ReconstructInput(cfg, trained.checkpoint, tmp_path))
    assert isinstance(res.err, ParameterError)
    wrong = write_image(torch.rand(1, 16, 16, dtype=torch.float64), tmp_path / "big.png")
    res = ReconstructImage(logger=CapturingLogger()).execute(
        ReconstructInput(cfg, trained.checkpoint, tmp_path, observation=wrong)
    )
    assert isinstance(res.err, ShapeError)


def test_reconstruct_warns_on_a_schedule_mismatch(workspace, tmp_path):
    _, cfg, trained = workspace
    shorter = cfg.model_copy(update={"schedule": cfg.schedule.model_copy(update={"T": 10})})
    logger = CapturingLogger()
    ReconstructImage(logger=logger).execute(
        ReconstructInput(shorter, trained.checkpoint, tmp_path, method=Method.BASELINE,
                         truth=cfg.train_dir / "tex_00000.png")
    ).unwrap()
    assert "checkpoint was trained with a different schedule" in logger.messages("warning")

    logger = CapturingLogger()
    ReconstructImage(logger=logger).execute(
        ReconstructInput(cfg, trained.checkpoint, tmp_path, method=Method.BASELINE,
                         truth=cfg.train_dir / "tex_00000.png")
    ).unwrap()
    assert "checkpoint was trained with a different schedule" not in logger.messages("warning")


def test_kernel_path_replaces_the_deblur_kernel(tmp_path):
    kernel = torch.zeros((3, 3), dtype=torch.float64)
    kernel[1, :] = 1.0 / 3.0
    path = save_array_text(kernel, tmp_path / "kernel.txt")
    base = tiny_config(tmp_path)
    cfg = base.model_copy(update={"task": Task.DEBLUR_GAUSSIAN, "kernel_path": path})
    op, sigma = task_operator(cfg, (1, 16, 16))
    assert torch.equal(op.kernel, kernel)
    assert sigma == DEBLUR_SIGMA

    with pytest.raises(ParameterError):
        task_operator(base.model_copy(update={"kernel_path": path}), (1, 16, 16))


def test_gaussian_deblur_reconstruction(workspace, tmp_path):
    _, cfg, trained = workspace
    cfg = cfg.model_copy(update={"task": Task.DEBLUR_GAUSSIAN})
    out = ReconstructImage(logger=CapturingLogger()).execute(
        ReconstructInput(cfg, trained.checkpoint, tmp_path, truth=cfg.train_dir / "tex_00002.png")
    ).unwrap()
    assert out.image.shape == (1, 16, 16)
    assert read_image(out.observation_path).shape == (1, 16, 16)


def test_adapt_use_case(workspace, tmp_path):
    _, cfg, trained = workspace
    obs_path = write_image(
        read_image(cfg.train_dir / "tex_00000.png")[:, ::2, ::2].contiguous(), tmp_path / "obs.png"
    )
    out = (
        AdaptDenoiser(clock=FakeClock(tick=1.0), logger=CapturingLogger())
        .execute(AdaptInput(cfg, obs_path, trained.checkpoint, tmp_path / "adapted.ckpt"))
        .unwrap()
    )
    assert len(out.loss_curve) == 2
    assert out.wall_time == 1.0
    assert len(out.neighbors) == 3
    assert (tmp_path / "adapted.neighbors.csv").exists()
    adapted = load_checkpoint(out.checkpoint)
    assert adapted.provenance["adaptation"]["source"] == "neighbors"

    base = (
        AdaptDenoiser(logger=CapturingLogger())
        .execute(AdaptInput(cfg, obs_path, trained.checkpoint, tmp_path / "same.ckpt", method=Method.BASELINE))
        .unwrap()
    )
    assert base.loss_csv is None
    assert base.wall_time == 0.0


def _eval_dirs(tmp_path: Path, workspace) -> tuple[Path, Path]:
    _, cfg, _ = workspace
    recon, truth = tmp_path / "recon", tmp_path / "truth"
    recon.mkdir()
    truth.mkdir()
    for name in ("tex_00000.png", "tex_00001.png"):
        shutil.copy(cfg.train_dir / name, truth / name)
    shutil.copy(cfg.train_dir / "tex_00000.png", recon / "tex_00000.png")
    shutil.copy(cfg.train_dir / "tex_00002.png", recon / "tex_00001.png")
    write_image(torch.zeros(1, 8, 8), recon / "tex_00000.observation.png")
    return recon, truth


def test_evaluate(workspace, tmp_path):
    _, cfg, _ = workspace
    recon, truth = _eval_dirs(tmp_path, workspace)
    report = (
        EvaluateReconstructions(logger=CapturingLogger())
        .execute(EvalInput(cfg, recon, truth, out_dir=tmp_path / "eval"))
        .unwrap()
    )
    assert [s.name for s in report.scores] == ["tex_00000.png", "tex_00001.png"]
    assert report.scores[0].psnr_text == "INF"
    assert 0 < report.scores[1].psnr < 100
    assert report.scores[1].seed == image_seed(cfg.seed, "tex_00001.png")
    with report.csv_path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image", "psnr_db", "seed"]
    assert rows[1][1] == "INF"
    assert [r[0] for r in rows[-2:]] == ["mean", "median"]


def test_evaluate_scores_a_bicubic_baseline(workspace, tmp_path):
    _, cfg, _ = workspace
    recon, truth = _eval_dirs(tmp_path, workspace)
    for name in ("tex_00000", "tex_00001"):
        y = read_image(truth / f"{name}.png")[:, ::2, ::2].contiguous()
        write_image(y, recon / f"{name}.observation.png")
    report = (
        EvaluateReconstructions(logger=CapturingLogger())
        .execute(EvalInput(cfg, recon, truth, out_dir=tmp_path / "eval", bicubic=True))
        .unwrap()
    )
    assert report.scores[0].psnr_text == "INF"
    assert all(0 < s.bicubic_psnr < 100 for s in report.scores)
    assert report.bicubic_mean == pytest.approx(sum(s.bicubic_psnr for s in report.scores) / 2)
    with report.csv_path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image", "psnr_db", "seed", "bicubic_psnr_db"]
    assert float(rows[1][3]) == pytest.approx(report.scores[0].bicubic_psnr, abs=1e-4)

    (recon / "tex_00001.observation.png").unlink()
    res = EvaluateReconstructions(logger=CapturingLogger()).execute(EvalInput(cfg, recon, truth, bicubic=True))
    assert isinstance(res.err, NotFound)
    assert res.err.details["missing"] == ["tex_00001.png"]


def test_evaluate_rejects_unmatched_files(workspace, tmp_path):
    _, cfg, _ = workspace
    recon, truth = _eval_dirs(tmp_path, workspace)
    shutil.copy(cfg.train_dir / "tex_00004.png", recon / "extra.png")
    res = EvaluateReconstructions(logger=CapturingLogger()).execute(EvalInput(cfg, recon, truth))
    assert isinstance(res, Err)
    assert res.err.details["orphans"] == ["extra.png"]
    res = EvaluateReconstructions(logger=CapturingLogger()).execute(EvalInput(cfg, tmp_path / "nope", truth))
    assert isinstance(res.err, NotFound)


def test_oracle_check_small_battery(tmp_path):
    cfg = tiny_config(tmp_path)
    logger = CapturingLogger()
    report = OracleCheck(logger=logger).execute(OracleInput(cfg, out_dir=tmp_path / "oracle", identity_trials=20)).unwrap()
    names = [c.name for c in report.checks]
    assert names == [
        "surrogate_identity",
        "calibration_mean",
        "calibration_covariance",
        "posterior_mean",
        "posterior_mse",
    ]
    assert report.checks[0].status == PASS
    assert all(c.status in (PASS, FAIL) for c in report.checks)
    assert report.best_scale == 0.5
    payload = json.loads(report.json_path.read_text())
    assert payload["passed"] == report.passed
    assert [c["name"] for c in payload["checks"]] == names
    assert logger.messages("info").count("oracle check") == 5


def test_oracle_check_skips_posterior_without_positive_scales(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg = cfg.model_copy(update={"oracle": cfg.oracle.model_copy(update={"scales": [0.0]})})
    report = OracleCheck(logger=CapturingLogger()).execute(OracleInput(cfg, identity_trials=5)).unwrap()
    assert [c.status for c in report.checks[-2:]] == [SKIPPED, SKIPPED]
    assert report.best_scale is None
    assert report.json_path is None


def test_oracle_check_reads_a_world_directory(tmp_path):
    cfg = tiny_config(tmp_path)
    GenerateData(logger=CapturingLogger()).execute(
        GenDataInput(cfg, tmp_path / "world", kind="gaussians", count=2)
    ).unwrap()
    res = OracleCheck(logger=CapturingLogger()).execute(
        OracleInput(cfg, world_dir=tmp_path / "world", identity_trials=5)
    )
    assert isinstance(res, Ok)
    assert res.unwrap().checks[0].status == PASS


def test_mis_signed_guidance_fails_the_posterior_check(tmp_path):
    cfg = tiny_config(tmp_path)
    cfg = cfg.model_copy(update={"oracle": cfg.oracle.model_copy(update={"scales": [5.0]})})

    def mis_signed(mu, y_t, A):
        return -guidance_gradient(mu, y_t, A)

    report = OracleCheck(logger=CapturingLogger()).execute(
        OracleInput(cfg, identity_trials=5, guidance_fn=mis_signed)
    ).unwrap()
    by_name = {c.name: c for c in report.checks}
    assert by_name["posterior_mean"].status == FAIL
    assert not report.passed


def test_over_dispersed_guidance_fails_the_per_sample_mse(tmp_path):
    cfg = tiny_config(tmp_path)

    def over_dispersed(mu, y_t, A):
        # antithetic kicks: the sample mean is unchanged, the spread is not
        gen = torch.Generator().manual_seed(int(mu.numel()))
        half = torch.randn((mu.shape[0] // 2, *mu.shape[1:]), generator=gen, dtype=mu.dtype)
        return guidance_gradient(mu, y_t, A) + 1e4 * torch.cat([half, -half])

    def by_name(guidance_fn):
        report = OracleCheck(logger=CapturingLogger()).execute(
            OracleInput(cfg, identity_trials=5, guidance_fn=guidance_fn)
        ).unwrap()
        return {c.name: c for c in report.checks}

    clean = by_name(None)
    spread = by_name(over_dispersed)
    assert spread["posterior_mean"].value == pytest.approx(clean["posterior_mean"].value, rel=1e-6)
    assert spread["posterior_mse"].status == FAIL
    assert spread["posterior_mse"].value > 10 * clean["posterior_mse"].value


@pytest.mark.slow
def test_default_oracle_battery_passes(tmp_path):
    from adir.config import RunConfig

    report = OracleCheck(logger=CapturingLogger()).execute(OracleInput(RunConfig(), out_dir=tmp_path)).unwrap()
    assert report.passed, [(c.name, c.status, c.value) for c in report.checks]


@pytest.mark.slow
def test_adir_beats_the_baseline_on_an_unseen_texture_family(tmp_path):
    overrides = {
        "model.hidden": 16,
        "model.blocks": 2,
        "model.embed_dim": 16,
        "train.iterations": 300,
        "train.batch_size": 8,
        "train.learning_rate": 1e-3,
        "guidance.steps": 20,
        "adapt.iterations": 200,
        "adapt.batch_size": 4,
        "adapt.learning_rate": 1e-3,
        "retrieval.K": 6,
        "data.count": 24,
    }
    text = tiny_config_text(tmp_path)
    for key, value in overrides.items():
        text = re.sub(rf"^{re.escape(key)} = .*$", f"{key} = {value}", text, flags=re.M)
    cfg = build_config(parse_config_text(text))
    logger = CapturingLogger()

    # prior and corpus come from different cluster draws
    GenerateData(logger=logger).execute(GenDataInput(cfg, cfg.train_dir, seed=0)).unwrap()
    corpus = GenerateData(logger=logger).execute(GenDataInput(cfg, cfg.corpus_dir, seed=7)).unwrap()
    truth_dir = tmp_path / "truth"
    truth_dir.mkdir()
    for path in corpus.files[-4:]:
        shutil.move(str(path), truth_dir / path.name)
    trained = TrainPrior(logger=logger).execute(TrainInput(cfg, tmp_path / "prior.ckpt")).unwrap()
    IngestCorpus(logger=logger).execute(IngestInput(cfg)).unwrap()

    means = {}
    for method in (Method.BASELINE, Method.ADIR):
        out_dir = tmp_path / method.value
        for truth in sorted(truth_dir.glob("*.png")):
            ReconstructImage(logger=logger).execute(
                ReconstructInput(cfg, trained.checkpoint, out_dir, method=method, truth=truth)
            ).unwrap()
        report = EvaluateReconstructions(logger=logger).execute(EvalInput(cfg, out_dir, truth_dir)).unwrap()
        means[method] = report.mean
    assert means[Method.ADIR] > means[Method.BASELINE], means
