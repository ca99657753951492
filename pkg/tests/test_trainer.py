"""Training loop, optimizer, gradient check, checkpoint, and eval tests."""

import numpy as np
import pytest

from m2hf.featureio import Dims, synth_dataset, write_dataset
from m2hf.model import build_model
from m2hf.objective import LossConfig
from m2hf.tensor import Tensor
from m2hf.trainer import (Dataset, Optimizer, TrainConfig, TrainingError,
                          evaluate, gradcheck, load_checkpoint,
                          save_checkpoint, train_e2e, train_ensemble)

DIMS = Dims(F=3, T=5, d_v=8, d_c=8, d_a=6, d_m=4)


def make_dataset(n_pairs=8, correlation=0.8, seed=0):
    manifest, videos, captions = synth_dataset(n_pairs, DIMS, correlation, seed)
    return Dataset(pairs=list(manifest.pairs), videos=videos,
                   captions=captions, dims=DIMS)


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.optimizer == "adam"
        assert cfg.loss.fusion == "min"

    @pytest.mark.parametrize("kwargs", [
        {"mode": "joint"},
        {"batch_size": 1},
        {"lr_head": 0.0},
        {"optimizer": "rmsprop"},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestOptimizer:
    def test_sgd_step(self):
        t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Optimizer({"t": t}, TrainConfig(optimizer="sgd", lr_head=0.1))
        opt.step({"t": np.array([1.0, -1.0])})
        np.testing.assert_allclose(t.array, [0.9, 2.1])

    def test_adam_first_step_closed_form(self):
        # with bias correction, step 1 moves by lr * g / (|g| + eps)
        t = Tensor(np.array([1.0, -3.0]), requires_grad=True)
        cfg = TrainConfig(optimizer="adam", lr_head=0.01, adam_eps=1e-8)
        opt = Optimizer({"t": t}, cfg)
        g = np.array([0.5, -2.0])
        opt.step({"t": g})
        expected = np.array([1.0, -3.0]) - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(t.array, expected, atol=1e-12)

    def test_adam_matches_reference_over_steps(self):
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal(4)
        t = Tensor(x0.copy(), requires_grad=True)
        cfg = TrainConfig(optimizer="adam", lr_head=0.05)
        opt = Optimizer({"t": t}, cfg)
        m = np.zeros(4)
        v = np.zeros(4)
        ref = x0.copy()
        for k in range(1, 6):
            g = rng.standard_normal(4)
            opt.step({"t": g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.05 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
            np.testing.assert_allclose(t.array, ref, atol=1e-12)

    def test_updates_in_place(self):
        t = Tensor(np.array([1.0]), requires_grad=True)
        arr = t.array
        Optimizer({"t": t}, TrainConfig(optimizer="sgd")).step({"t": np.array([1.0])})
        assert t.array is arr


class TestTraining:
    def test_e2e_reduces_loss(self):
        data = make_dataset(correlation=0.6)
        params = build_model(DIMS, seed=1)
        cfg = TrainConfig(batch_size=4, max_steps=30, lr_head=5e-3, seed=1,
                          loss=LossConfig(lam=4.0, eta=4.0))
        _, trace = train_e2e(data, params, cfg)
        assert len(trace) == 30
        assert np.mean(trace[-5:]) < np.mean(trace[:5])

    def test_e2e_deterministic_in_seed(self):
        results = []
        for _ in range(2):
            data = make_dataset()
            params = build_model(DIMS, seed=2)
            cfg = TrainConfig(batch_size=4, max_steps=6, seed=3)
            _, trace = train_e2e(data, params, cfg)
            results.append((trace, params.registry()["mfb.psi"].array.copy()))
        assert results[0][0] == results[1][0]
        np.testing.assert_array_equal(results[0][1], results[1][1])

    def test_different_seeds_differ(self):
        traces = []
        for seed in (4, 5):
            data = make_dataset()
            params = build_model(DIMS, seed=2)
            cfg = TrainConfig(batch_size=4, max_steps=6, seed=seed,
                              loss=LossConfig(lam=4.0, eta=4.0))
            _, trace = train_e2e(data, params, cfg)
            traces.append(trace)
        assert traces[0] != traces[1]

    def test_epochs_and_partial_batch_drop(self):
        data = make_dataset(n_pairs=10)
        params = build_model(DIMS, seed=6)
        # 10 pairs, batch 4 -> 2 full batches per epoch, remainder dropped
        cfg = TrainConfig(batch_size=4, epochs=3, seed=0)
        _, trace = train_e2e(data, params, cfg)
        assert len(trace) == 6

    def test_max_steps_overrides_epochs(self):
        data = make_dataset()
        params = build_model(DIMS, seed=7)
        cfg = TrainConfig(batch_size=4, epochs=1, max_steps=5, seed=0)
        _, trace = train_e2e(data, params, cfg)
        assert len(trace) == 5

    def test_dataset_smaller_than_batch_rejected(self):
        data = make_dataset(n_pairs=2)
        params = build_model(DIMS, seed=8)
        with pytest.raises(TrainingError, match="smaller than batch"):
            train_e2e(data, params, TrainConfig(batch_size=4))

    def test_mode_mismatch_rejected(self):
        data = make_dataset()
        params = build_model(DIMS, seed=9)
        with pytest.raises(ValueError):
            train_ensemble(data, params, TrainConfig(mode="e2e"))
        with pytest.raises(ValueError):
            train_e2e(data, params, TrainConfig(mode="ensemble"))


class TestEnsemble:
    def test_partition_is_exact(self):
        params = build_model(DIMS, seed=10)
        registry = params.registry()
        partition = params.level_partition()
        seen = []
        for names in partition.values():
            seen.extend(names)
        assert sorted(seen) == sorted(registry)
        assert partition["visual"] == [n for n in registry if n.startswith("wti_visual.")]
        assert all(n.startswith(("wti_audio.", "mfb.", "se_audio."))
                   for n in partition["audio"])
        assert all(n.startswith(("wti_motion.", "motion."))
                   for n in partition["motion"])

    def test_ensemble_training_touches_only_owned_tensors(self):
        data = make_dataset()
        params = build_model(DIMS, seed=11)
        registry = params.registry()
        before = {n: t.array.copy() for n, t in registry.items()}
        partition = params.level_partition()

        # train only by monkey-limiting max_steps per level
        cfg = TrainConfig(mode="ensemble", batch_size=4, max_steps=3, seed=0,
                          loss=LossConfig(lam=4.0, eta=4.0))
        _, traces = train_ensemble(data, params, cfg)
        assert set(traces) == {"visual", "audio", "motion"}
        for level, names in partition.items():
            moved = [n for n in names
                     if not np.array_equal(before[n], registry[n].array)]
            assert moved, f"no tensor of level {level} moved"

    def test_visual_head_zero_init_moves_under_training(self):
        data = make_dataset(correlation=0.5)
        params = build_model(DIMS, seed=12)
        cfg = TrainConfig(mode="ensemble", batch_size=4, max_steps=5, seed=0,
                          loss=LossConfig(lam=4.0, eta=4.0))
        train_ensemble(data, params, cfg)
        assert np.abs(params.wti_visual.caption_weight_head.array).max() > 0


class TestEvaluate:
    def test_report_shape_and_padded_counts(self):
        data = make_dataset(n_pairs=6)
        for v in list(data.videos.values())[:2]:
            v.audio = Tensor(np.ones((DIMS.F, DIMS.d_a)))
            v.audio_padded = True
        params = build_model(DIMS, seed=13)
        report = evaluate(data, params)
        assert report.padded_audio == 2
        assert report.padded_motion == 0
        assert ("t2v", "fused") in report.slices

    def test_drop_removes_level(self):
        data = make_dataset(n_pairs=6)
        params = build_model(DIMS, seed=14)
        report = evaluate(data, params, drop=("motion",))
        levels = {lv for _d, lv in report.slices}
        assert "motion" not in levels
        assert levels == {"visual", "audio", "text", "fused"}

    def test_all_dropped_rejected(self):
        data = make_dataset(n_pairs=4)
        params = build_model(DIMS, seed=15)
        with pytest.raises(ValueError):
            evaluate(data, params, drop=("visual", "audio", "motion", "text"))

    def test_high_correlation_perfect_retrieval(self):
        data = make_dataset(n_pairs=6, correlation=1.0)
        params = build_model(DIMS, seed=16)
        report = evaluate(data, params)
        assert report.slices[("t2v", "fused")].recall[1] == 1.0

    def test_deterministic(self):
        data = make_dataset(n_pairs=5)
        params = build_model(DIMS, seed=17)
        a = evaluate(data, params).text()
        b = evaluate(data, params).text()
        assert a == b


class TestGradcheck:
    def _setup(self):
        data = make_dataset(n_pairs=4, correlation=0.5)
        params = build_model(DIMS, seed=18)
        caps, vids = data.batch(range(4))
        cfg = TrainConfig(batch_size=4, loss=LossConfig(lam=3.0, eta=3.0))
        return params, caps, vids, cfg

    def test_passes_on_healthy_model(self):
        params, caps, vids, cfg = self._setup()
        report = gradcheck(params, caps, vids, cfg, max_entries_per_tensor=2)
        assert report.passed
        assert len(report.entries) == len(params.registry())

    def test_corrupted_gradient_detected(self):
        params, caps, vids, cfg = self._setup()
        report = gradcheck(params, caps, vids, cfg, max_entries_per_tensor=2,
                           corrupt="mfb.psi")
        assert not report.passed
        failed = [e.name for e in report.entries if not e.passed]
        assert failed == ["mfb.psi"]

    def test_report_lines_format(self):
        params, caps, vids, cfg = self._setup()
        report = gradcheck(params, caps, vids, cfg, max_entries_per_tensor=1)
        for line in report.lines():
            status, name, err = line.split("\t")
            assert status in ("PASS", "FAIL")
            float(err)


class TestCheckpoint:
    def test_round_trip_is_byte_exact(self, tmp_path):
        params = build_model(DIMS, seed=19)
        p1 = tmp_path / "a.ckpt"
        save_checkpoint(p1, params, step=7, config_echo={"mode": "e2e"})
        fresh = build_model(DIMS, seed=20)
        step = load_checkpoint(p1, fresh)
        assert step == 7
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p2, fresh, step=7, config_echo={"mode": "e2e"})
        assert p1.read_bytes() == p2.read_bytes()

    def test_values_restored_within_f32(self, tmp_path):
        params = build_model(DIMS, seed=21)
        save_checkpoint(tmp_path / "c.ckpt", params, step=1)
        fresh = build_model(DIMS, seed=22)
        load_checkpoint(tmp_path / "c.ckpt", fresh)
        for name, t in params.registry().items():
            np.testing.assert_allclose(fresh.registry()[name].array, t.array,
                                       atol=1e-6, err_msg=name)

    def test_registry_mismatch_rejected(self, tmp_path):
        params = build_model(DIMS, seed=23)
        save_checkpoint(tmp_path / "d.ckpt", params, step=1)
        blob = (tmp_path / "d.ckpt").read_bytes()
        (tmp_path / "bad.ckpt").write_bytes(
            blob.replace(b"tensor\tmfb.psi\n", b"tensor\tmfb.oops\n"))
        with pytest.raises(TrainingError):
            load_checkpoint(tmp_path / "bad.ckpt", build_model(DIMS, seed=23))

    def test_trailing_bytes_rejected(self, tmp_path):
        params = build_model(DIMS, seed=24)
        save_checkpoint(tmp_path / "e.ckpt", params, step=1)
        blob = (tmp_path / "e.ckpt").read_bytes() + b"junk"
        (tmp_path / "e2.ckpt").write_bytes(blob)
        with pytest.raises(TrainingError, match="trailing"):
            load_checkpoint(tmp_path / "e2.ckpt", build_model(DIMS, seed=24))


class TestDatasetFromManifest:
    def test_load_from_disk(self, tmp_path):
        manifest, videos, captions = synth_dataset(3, DIMS, correlation=0.5, seed=25)
        written = write_dataset(manifest, videos, captions, tmp_path)
        data = Dataset.from_manifest(written)
        assert len(data.pairs) == 3
        caps, vids = data.batch([0, 2])
        assert caps[0].caption_id == "c0000"
        assert vids[1].video_id == "v0002"
