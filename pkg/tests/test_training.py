import csv
import math

import numpy as np
import pytest

from tbformer.bayar import constraint_violation
from tbformer.checkpoint import CheckpointError, checkpoint_load, checkpoint_save, decode, encode
from tbformer.config import ConfigError, ModelConfig
from tbformer.data.dataset import donor_pool, make_sample
from tbformer.model import init_params, predict
from tbformer.optim import ScheduleConfig, global_norm, lr_at, sgd_step
from tbformer.train import (
    LOSS_LOG,
    MODEL_FILE,
    STATE_FILE,
    TrainingError,
    batch_indices,
    load_state,
    train,
)

CFG = ModelConfig.toy()


@pytest.fixture(scope="module")
def toy_data():
    pool = donor_pool(1, 32, 32)
    return [(s.image, s.mask) for s in (make_sample(1, i, 32, 32, pool) for i in range(4))]


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        params = init_params(CFG)
        checkpoint_save(params, tmp_path / "a.tbf")
        loaded = checkpoint_load(tmp_path / "a.tbf", params)
        assert list(loaded) == list(params)
        for k in params:
            assert loaded[k].dtype == np.float32
            assert loaded[k].tobytes() == params[k].tobytes()

    def test_save_load_save_identical(self, tmp_path):
        params = init_params(CFG)
        checkpoint_save(params, tmp_path / "a.tbf")
        checkpoint_save(checkpoint_load(tmp_path / "a.tbf"), tmp_path / "b.tbf")
        assert (tmp_path / "a.tbf").read_bytes() == (tmp_path / "b.tbf").read_bytes()

    def test_loaded_forward_identical(self, tmp_path):
        params = init_params(CFG)
        checkpoint_save(params, tmp_path / "m.tbf")
        img = np.random.default_rng(0).uniform(size=(3, 32, 32))
        a = predict(img, params, CFG)
        b = predict(img, checkpoint_load(tmp_path / "m.tbf"), CFG)
        assert a.tobytes() == b.tobytes()

    def test_bad_magic(self, tmp_path):
        blob = bytearray(encode({"x": np.ones(3, np.float32)}))
        blob[:4] = b"NOPE"
        with pytest.raises(CheckpointError, match="magic"):
            decode(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(encode({"x": np.ones(3, np.float32)}))
        blob[4] = 9
        with pytest.raises(CheckpointError, match="version"):
            decode(bytes(blob))

    def test_truncation_and_corruption(self):
        blob = encode({"x": np.ones(3, np.float32), "y": np.zeros((2, 2), np.float32)})
        for cut in (5, 20, len(blob) - 1):
            with pytest.raises(CheckpointError):
                decode(blob[:cut])
        flipped = bytearray(blob)
        flipped[30] ^= 0xFF
        with pytest.raises(CheckpointError):
            decode(bytes(flipped))

    def test_template_mismatch(self, tmp_path):
        params = {"a": np.ones(2, np.float32), "b": np.ones((2, 2), np.float32)}
        checkpoint_save(params, tmp_path / "c.tbf")
        with pytest.raises(CheckpointError, match="unknown"):
            checkpoint_load(tmp_path / "c.tbf", {"a": params["a"]})
        with pytest.raises(CheckpointError, match="lacks"):
            checkpoint_load(tmp_path / "c.tbf", {**params, "c": np.ones(1)})
        with pytest.raises(CheckpointError, match="shape"):
            checkpoint_load(tmp_path / "c.tbf", {"a": np.ones(3), "b": params["b"]})

    def test_failed_load_leaves_no_partial_state(self, tmp_path):
        path = tmp_path / "bad.tbf"
        path.write_bytes(b"TBF1" + b"\0" * 40)
        with pytest.raises(CheckpointError):
            checkpoint_load(path)
        # loading never writes
        assert path.read_bytes() == b"TBF1" + b"\0" * 40


class TestSchedule:
    def test_initial_rate(self):
        assert lr_at(0, ScheduleConfig()) == 0.001

    def test_final_rate(self):
        assert lr_at(1000, ScheduleConfig(iter_total=1000)) == 0.0

    def test_midpoint(self):
        cfg = ScheduleConfig(lr0=0.001, iter_total=100)
        assert abs(lr_at(50, cfg) - 0.001 * 0.5**0.9) < 1e-12
        assert abs(lr_at(50, cfg) - 5.359e-4) < 1e-7

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(-1, ScheduleConfig())
        with pytest.raises(ValueError):
            lr_at(1001, ScheduleConfig(iter_total=1000))

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            ScheduleConfig(lr0=0.0)
        with pytest.raises(ConfigError):
            ScheduleConfig(momentum=1.0)


class TestSGD:
    def test_zero_lr_leaves_params(self):
        params = {"w": np.arange(4, dtype=np.float32)}
        before = params["w"].copy()
        sgd_step(params, {"w": np.ones(4)}, 0.0, {})
        np.testing.assert_array_equal(params["w"], before)

    def test_vanilla_step(self):
        params = {"w": np.array([1.0, 2.0])}
        sgd_step(params, {"w": np.array([0.5, -1.0])}, 0.1, {}, momentum=0.0)
        np.testing.assert_allclose(params["w"], [0.95, 2.1], rtol=1e-15)

    def test_momentum_accumulates(self):
        params, state = {"w": np.array([0.0])}, {}
        for _ in range(2):
            sgd_step(params, {"w": np.array([1.0])}, 1.0, state, momentum=0.9)
        # v1 = 1, v2 = 1.9
        np.testing.assert_allclose(params["w"], [-2.9], rtol=1e-15)

    def test_missing_grad_names_parameter(self):
        with pytest.raises(KeyError, match="bias"):
            sgd_step({"w": np.zeros(1), "bias": np.zeros(1)}, {"w": np.zeros(1)}, 0.1, {})

    def test_clip(self):
        params = {"w": np.zeros(2)}
        sgd_step(params, {"w": np.array([3.0, 4.0])}, 1.0, {}, momentum=0.0, clip_norm=1.0)
        np.testing.assert_allclose(params["w"], [-0.6, -0.8])
        assert global_norm([np.array([3.0, 4.0])]) == 5.0

    def test_bayar_constraint_after_every_step(self):
        params = init_params(CFG)
        state = {}
        rng = np.random.default_rng(0)
        for _ in range(5):
            grads = {k: rng.standard_normal(v.shape) for k, v in params.items()}
            sgd_step(params, grads, 0.05, state)
            assert constraint_violation(params["bayar.kernels"]) <= 1e-6
            assert params["bayar.kernels"].dtype == np.float32


class TestBatching:
    def test_epoch_is_permutation(self):
        seen = [i for it in range(3) for i in batch_indices(it, 4, 12, seed=0)]
        assert sorted(seen) == list(range(12))

    def test_deterministic_and_seeded(self):
        assert batch_indices(5, 3, 7, 1) == batch_indices(5, 3, 7, 1)
        runs = {tuple(batch_indices(0, 7, 7, s)) for s in range(5)}
        assert len(runs) > 1


class TestTrain:
    def test_initial_loss_near_ln2(self, toy_data):
        state = train(CFG, ScheduleConfig(iter_total=1, batch_size=4), toy_data)
        assert abs(state.losses[0][2] - math.log(2)) < 0.2

    def test_loss_log(self, tmp_path, toy_data):
        sched = ScheduleConfig(lr0=0.01, iter_total=5, batch_size=2)
        train(CFG, sched, toy_data, tmp_path)
        with (tmp_path / LOSS_LOG).open() as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["iteration"]) for r in rows] == list(range(5))
        for r in rows:
            assert float(r["lr"]) == lr_at(int(r["iteration"]), sched)
            assert math.isfinite(float(r["loss"]))
        assert (tmp_path / MODEL_FILE).exists() and (tmp_path / STATE_FILE).exists()

    def test_identical_seeds_identical_trajectories(self, toy_data):
        sched = ScheduleConfig(lr0=0.05, iter_total=6, batch_size=2)
        a = train(CFG, sched, toy_data)
        b = train(CFG, sched, toy_data)
        assert a.losses == b.losses
        assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
        c = train(CFG.with_(seed=1), sched, toy_data)
        assert c.losses != a.losses

    def test_resume_matches_uninterrupted(self, tmp_path, toy_data):
        sched = ScheduleConfig(lr0=0.05, iter_total=8, batch_size=3)
        full = train(CFG, sched, toy_data, tmp_path / "full")
        train(CFG, sched, toy_data, tmp_path / "part", stop_after=3)
        assert load_state(tmp_path / "part", CFG).iteration == 3
        resumed = train(CFG, sched, toy_data, tmp_path / "part", resume=True)
        assert resumed.losses == full.losses
        for k in full.params:
            assert resumed.params[k].tobytes() == full.params[k].tobytes()
            assert resumed.momentum[k].tobytes() == full.momentum[k].tobytes()
        assert (tmp_path / "full" / LOSS_LOG).read_bytes() == (tmp_path / "part" / LOSS_LOG).read_bytes()

    def test_nan_aborts_naming_iteration(self, toy_data, monkeypatch):
        import tbformer.train as tr

        real = tr.batch_loss
        calls = []

        def poisoned(*args, **kwargs):
            loss, grads = real(*args, **kwargs)
            calls.append(1)
            return (float("nan") if len(calls) == 3 else loss), grads

        monkeypatch.setattr(tr, "batch_loss", poisoned)
        with pytest.raises(TrainingError, match=r"iteration 2\b"):
            train(CFG, ScheduleConfig(iter_total=5, batch_size=1), toy_data)

    def test_empty_data(self):
        with pytest.raises(TrainingError):
            train(CFG, ScheduleConfig(), [])

    def test_resume_requires_directory(self, toy_data):
        with pytest.raises(TrainingError):
            train(CFG, ScheduleConfig(iter_total=2), toy_data, resume=True)

    def test_resume_keeps_validation_log(self, tmp_path, toy_data):
        sched = ScheduleConfig(lr0=0.05, iter_total=4, batch_size=2)
        val = toy_data[:2]
        train(CFG, sched, toy_data, tmp_path / "full", val_data=val, checkpoint_every=1)
        train(CFG, sched, toy_data, tmp_path / "part", val_data=val, checkpoint_every=1, stop_after=2)
        train(CFG, sched, toy_data, tmp_path / "part", val_data=val, checkpoint_every=1, resume=True)
        assert (tmp_path / "full" / "val.csv").read_text() == (tmp_path / "part" / "val.csv").read_text()
        assert len((tmp_path / "full" / "val.csv").read_text().splitlines()) == 5
