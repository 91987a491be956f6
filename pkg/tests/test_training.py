import hashlib
from dataclasses import replace

import numpy as np
import pytest
import torch

from blindlf.degradation import degrade_lightfield
from blindlf.evaluation import make_synthetic_scene
from blindlf.restoration import RestorationConfig, RestorationNetwork
from blindlf.training import (
    PRESETS,
    TrainConfig,
    TrainingDiverged,
    augment_sample,
    batch_tensors,
    iteration_rng,
    load_checkpoint,
    lr_at,
    model_from_checkpoint,
    pretrain_estimator,
    sample_batch,
    sample_patch,
    self_constraint_loss_torch,
    total_loss,
    train_joint,
)
from blindlf.serialization import save_blob

TOY_MODEL = RestorationConfig(n1=1, feature_channels=8, kernel_embed_dim=8, num_rcab=1)


def toy_train_cfg(**overrides):
    base = dict(batch_size=2, pretrain_iters=3, total_iters=3, seed=7, log_every=1)
    base.update(overrides)
    return replace(TrainConfig(), **base)


@pytest.fixture(scope="module")
def scene():
    return make_synthetic_scene(np.random.default_rng(0), (3, 3), (192, 192), 0.8).hr


def state_hash(module):
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class TestSamplePatch:
    def test_protocol_shapes(self, scene):
        cfg = toy_train_cfg()
        sample = sample_patch(scene, np.random.default_rng(1), cfg)
        assert sample.hr.data.shape == (3, 3, 128, 128, 3)
        assert sample.lr.data.shape == (3, 3, 32, 32, 3)
        assert sample.hr_padded.data.shape == (3, 3, 152, 152, 3)
        assert not sample.augmented

    def test_deterministic(self, scene):
        cfg = toy_train_cfg()
        a = sample_patch(scene, np.random.default_rng(3), cfg)
        b = sample_patch(scene, np.random.default_rng(3), cfg)
        assert np.array_equal(a.lr.data, b.lr.data)
        assert np.array_equal(a.hr.data, b.hr.data)
        assert a.record.config == b.record.config

    def test_scene_too_small(self):
        small = make_synthetic_scene(np.random.default_rng(1), (3, 3), (64, 64), 0.5).hr
        with pytest.raises(ValueError, match="smaller than patch"):
            sample_patch(small, np.random.default_rng(0), toy_train_cfg())

    def test_redegrading_window_reproduces_lr_bit_exactly(self, scene):
        cfg = toy_train_cfg()
        rng = np.random.default_rng(9)
        for _ in range(100):
            sample = sample_patch(scene, rng, cfg)
            again, _ = degrade_lightfield(sample.hr_padded, sample.record.config, margin=cfg.margin)
            assert np.array_equal(again.data, sample.lr.data)

    def test_consistency_loss_vanishes_at_recorded_truth(self, scene):
        from blindlf.degradation import self_constraint_loss

        cfg = toy_train_cfg()
        rng = np.random.default_rng(11)
        sample = sample_patch(scene, rng, cfg)
        lr_unclamped, record = degrade_lightfield(
            sample.hr_padded, sample.record.config, margin=cfg.margin, clamp=False
        )
        loss = self_constraint_loss(
            sample.hr_padded, lr_unclamped, record.kernel_array(), -record.noise,
            alpha=cfg.alpha, margin=cfg.margin,
        )
        assert loss <= 1e-6


class TestAugmentSample:
    def test_flag_and_shapes(self, scene):
        cfg = toy_train_cfg()
        sample = sample_patch(scene, np.random.default_rng(5), cfg)
        # seed chosen so at least one op fires
        out = augment_sample(sample, np.random.default_rng(1))
        assert out.augmented
        assert out.hr.data.shape[2:] == (128, 128, 3)
        assert out.lr.data.shape[2:] == (32, 32, 3)
        assert out.hr_padded.data.shape[2:] == (152, 152, 3)

    def test_no_ops_returns_same_sample(self, scene):
        cfg = toy_train_cfg()
        sample = sample_patch(scene, np.random.default_rng(6), cfg)
        class NeverFire:
            def random(self):
                return 0.9
        out = augment_sample(sample, NeverFire())
        assert out is sample


class TestSchedule:
    def test_paper_schedule_values(self):
        cfg = TrainConfig()
        assert lr_at(cfg, 0) == pytest.approx(2e-4)
        assert lr_at(cfg, 30_000) == pytest.approx(1e-4)
        assert lr_at(cfg, 60_000) == pytest.approx(5e-5)
        assert lr_at(cfg, 29_999) == pytest.approx(2e-4)

    def test_closed_form_everywhere(self):
        cfg = TrainConfig()
        for it in (0, 1, 12_345, 45_000, 99_999):
            assert lr_at(cfg, it) == cfg.base_lr * cfg.lr_decay ** (it // cfg.lr_decay_every)


class TestLoss:
    def test_perfect_prediction_is_zero(self, scene):
        cfg = toy_train_cfg(batch_size=1)
        tensors = batch_tensors(sample_batch([scene], replace(cfg, augment=False), 0), 4,
                                torch.float64)
        kernels = torch.zeros(1, 3, 3, 21, 21, dtype=torch.float64)
        kernels[..., 10, 10] = 1.0
        outputs = {
            "sr": tensors["hr"].clone(),
            "kernels": kernels,
            "noise": torch.zeros(1, 3, 3, 3, 32, 32, dtype=torch.float64),
        }
        # forge a noiseless degenerate pair: lr equals the delta-blurred
        # downsample of the padded window
        from blindlf.training import blur_downsample_torch

        tensors["lr"] = blur_downsample_torch(tensors["hr_padded"], kernels, 4, cfg.margin)
        total, comps = total_loss(outputs, tensors, 4, cfg.margin)
        assert float(total) <= 1e-6

    def test_constant_offset_rec_loss(self, scene):
        cfg = toy_train_cfg(batch_size=1)
        tensors = batch_tensors(sample_batch([scene], cfg, 0), 4, torch.float64)
        kernels = torch.zeros(1, 3, 3, 21, 21, dtype=torch.float64)
        kernels[..., 10, 10] = 1.0
        from blindlf.training import blur_downsample_torch

        tensors["lr"] = blur_downsample_torch(tensors["hr_padded"], kernels, 4, cfg.margin)
        outputs = {
            "sr": tensors["hr"] + 0.1,
            "kernels": kernels,
            "noise": torch.zeros(1, 3, 3, 3, 32, 32, dtype=torch.float64),
        }
        total, comps = total_loss(outputs, tensors, 4, cfg.margin)
        assert abs(float(total) - 0.1) <= 1e-9
        assert comps["loss_rec"] == pytest.approx(0.1)
        assert comps["loss_de"] == pytest.approx(0.0, abs=1e-9)

    def test_components_sum_to_total(self, scene):
        cfg = toy_train_cfg(batch_size=1)
        model = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        tensors = batch_tensors(sample_batch([scene], cfg, 1), 4)
        outputs = model(tensors["lr"], bic_up=tensors["bic_up"])
        total, comps = total_loss(outputs, tensors, 4, cfg.margin, w_de=1.0)
        assert total.detach().item() == pytest.approx(comps["loss_rec"] + comps["loss_de"], rel=1e-6)
        assert comps["loss_rec"] >= 0 and comps["loss_de"] >= 0


class TestPretrain:
    def test_loss_decreases_and_restoration_untouched(self, scene):
        cfg = toy_train_cfg(pretrain_iters=25, batch_size=2, noise_range=(0.0, 0.0))
        model = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        probe = batch_tensors(sample_batch([scene], cfg, 500), cfg.alpha)

        def probe_lde():
            with torch.no_grad():
                k, n = model.estimator(probe["lr"])
                return float(
                    self_constraint_loss_torch(
                        probe["hr_padded"], probe["lr"], k, n, cfg.alpha, cfg.margin
                    )
                )

        def probe_noise_mag():
            with torch.no_grad():
                _, n = model.estimator(probe["lr"])
                return float(n.abs().mean())

        before = probe_lde()
        noise_before = probe_noise_mag()
        rest_hash = state_hash(model.reconstructor)
        blocks_hash = state_hash(model.blocks)
        pretrain_estimator([scene], model, cfg)
        after = probe_lde()
        assert after < before
        # noiseless training data drives the noise maps toward zero
        assert probe_noise_mag() < noise_before
        assert state_hash(model.reconstructor) == rest_hash
        assert state_hash(model.blocks) == blocks_hash

    def test_deterministic(self, scene):
        cfg = toy_train_cfg(pretrain_iters=4)
        a = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        b = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        pretrain_estimator([scene], a, cfg, deterministic=True)
        pretrain_estimator([scene], b, cfg, deterministic=True)
        assert state_hash(a) == state_hash(b)


class TestJoint:
    def test_resume_equivalence(self, scene):
        cfg = toy_train_cfg(total_iters=6)
        full = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        train_joint([scene], full, cfg, deterministic=True)

        half_model = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        half = train_joint([scene], half_model, replace(cfg, total_iters=3), deterministic=True)
        resumed = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        train_joint([scene], resumed, cfg, init=half, deterministic=True)
        assert state_hash(full) == state_hash(resumed)

    def test_nan_aborts_with_diagnostics(self, scene):
        cfg = toy_train_cfg(total_iters=1)
        model = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        with torch.no_grad():
            model.fuse_init.weight.fill_(float("nan"))
        with pytest.raises(TrainingDiverged, match="iteration 0"):
            train_joint([scene], model, cfg)

    def test_writes_log_and_checkpoint(self, scene, tmp_path):
        cfg = toy_train_cfg(total_iters=2, checkpoint_every=1)
        model = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        train_joint([scene], model, cfg, out_dir=tmp_path)
        log = (tmp_path / "train_log.csv").read_text().splitlines()
        assert log[0] == "iter,loss,loss_rec,loss_de,lr,seconds"
        assert len(log) >= 3
        assert (tmp_path / "joint.ckpt").exists()


class TestCheckpoint:
    def test_save_load_save_byte_identical(self, scene, tmp_path):
        cfg = toy_train_cfg(total_iters=1)
        model = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        state = train_joint([scene], model, cfg)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_blob(p1, *state)
        arrays, meta = load_checkpoint(p1)
        save_blob(p2, arrays, meta)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_mismatch_fails_loudly(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        save_blob(path, {"x": np.zeros(2)}, {"format_version": 999})
        with pytest.raises(ValueError, match="format_version"):
            load_checkpoint(path)

    def test_model_round_trip_reproduces_outputs(self, scene, tmp_path):
        cfg = toy_train_cfg(total_iters=1)
        model = RestorationNetwork((3, 3), TOY_MODEL, seed=0)
        state = train_joint([scene], model, cfg)
        path = tmp_path / "m.ckpt"
        save_blob(path, *state)
        arrays, meta = load_checkpoint(path)
        clone = model_from_checkpoint(arrays, meta)
        x = torch.rand(1, 3, 3, 3, 16, 16)
        torch.manual_seed(0)
        a = model(x)["sr"]
        b = clone(x)["sr"]
        assert torch.equal(a, b)

    def test_presets_exposed(self):
        assert set(PRESETS) == {"desk", "paper"}
        desk_train, desk_model = PRESETS["desk"]
        assert desk_model.feature_channels == 16 and desk_model.n1 == 2
        paper_train, paper_model = PRESETS["paper"]
        assert paper_train.total_iters == 100_000
        assert paper_model.n1 == 10


def test_iteration_rng_stateless():
    a = iteration_rng(5, 42).standard_normal(4)
    b = iteration_rng(5, 42).standard_normal(4)
    assert np.array_equal(a, b)


def test_train_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        replace(TrainConfig(), hr_crop=130)
    with pytest.raises(ValueError, match="lr_decay"):
        replace(TrainConfig(), lr_decay=0.0)
    with pytest.raises(ValueError, match="margin"):
        replace(TrainConfig(), hr_patch=140)
