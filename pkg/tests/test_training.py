"""Optimizer, early stopping, the training loop, and checkpoints."""

import json
import math

import numpy as np
import pytest

import speechresp.training as training_mod
from speechresp.errors import DivergenceError, FormatError, ParameterError, TruncationError
from speechresp.model import (
    BranchSpec,
    ModelConfig,
    init_params,
    named_arrays,
    zeros_like_params,
)
from speechresp.training import (
    CKPT_MAGIC,
    EarlyStopper,
    TrainConfig,
    _Adam,
    checkpoint_metadata,
    load_checkpoint,
    save_checkpoint,
    train,
)

from conftest import make_segment


def tiny_cfg(seed=0):
    return ModelConfig(
        branches=[BranchSpec(3, conv_width=3)], lstm_layers=1, lstm_units=4, embed_units=3, seed=seed
    )


def tiny_sets(rng, n_train=6, n_val=2, n_frames=20):
    train_set = [make_segment(rng, n_frames) for _ in range(n_train)]
    val_set = [make_segment(rng, n_frames) for _ in range(n_val)]
    return train_set, val_set


def snapshot(params):
    return [a.copy() for _, a in named_arrays(params)]


class TestAdam:
    def test_zero_gradient_is_a_no_op(self):
        cfg = tiny_cfg()
        params = init_params(cfg)
        before = snapshot(params)
        opt = _Adam(params, TrainConfig())
        opt.step(params, zeros_like_params(params))
        for b, (_, a) in zip(before, named_arrays(params)):
            np.testing.assert_array_equal(a, b)

    def test_vanishing_lr_changes_nothing_measurable(self, rng):
        cfg = tiny_cfg()
        params = init_params(cfg)
        before = snapshot(params)
        grads = init_params(ModelConfig.from_dict({**cfg.to_dict(), "seed": 9}))
        opt = _Adam(params, TrainConfig(lr=1e-300))
        opt.step(params, grads)
        for b, (_, a) in zip(before, named_arrays(params)):
            np.testing.assert_allclose(a, b, atol=1e-250)

    def test_first_step_moves_against_gradient_sign(self):
        cfg = tiny_cfg()
        params = init_params(cfg)
        before = snapshot(params)
        grads = init_params(ModelConfig.from_dict({**cfg.to_dict(), "seed": 7}))
        lr = 0.01
        opt = _Adam(params, TrainConfig(lr=lr))
        opt.step(params, grads)
        # bias-corrected first step is lr * g / (|g| + eps) ~= lr * sign(g)
        for b, (_, g), (_, a) in zip(before, named_arrays(grads), named_arrays(params)):
            nonzero = np.abs(g) > 1e-3
            np.testing.assert_allclose(
                (b - a)[nonzero], lr * np.sign(g[nonzero]), atol=1e-5
            )

    def test_steps_are_deterministic(self):
        results = []
        for _ in range(2):
            cfg = tiny_cfg()
            params = init_params(cfg)
            grads = init_params(ModelConfig.from_dict({**cfg.to_dict(), "seed": 3}))
            opt = _Adam(params, TrainConfig())
            for _ in range(4):
                opt.step(params, grads)
            results.append(snapshot(params))
        for a, b in zip(*results):
            np.testing.assert_array_equal(a, b)


class TestEarlyStopper:
    def test_improvements_reset_patience(self):
        s = EarlyStopper(patience=2)
        assert s.update(1, 1.0) is True
        assert s.update(2, 1.1) is False
        assert not s.should_stop
        assert s.update(3, 0.9) is True
        assert s.best_epoch == 3 and s.best == 0.9
        assert not s.should_stop

    def test_stops_after_patience_bad_epochs(self):
        s = EarlyStopper(patience=1)
        s.update(1, 0.5)
        assert not s.should_stop
        s.update(2, 0.6)
        assert s.should_stop
        assert s.best_epoch == 1

    def test_equal_loss_is_not_an_improvement(self):
        s = EarlyStopper(patience=3)
        s.update(1, 0.5)
        assert s.update(2, 0.5) is False
        assert s.bad_epochs == 1

    def test_monotone_increase_stops_at_patience(self):
        s = EarlyStopper(patience=3)
        for epoch, v in enumerate([1.0, 1.1, 1.2, 1.3], start=1):
            s.update(epoch, v)
        assert s.should_stop and s.best_epoch == 1

    def test_bad_patience(self):
        with pytest.raises(ParameterError):
            EarlyStopper(patience=0)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ParameterError):
            TrainConfig(lr=0.0)
        with pytest.raises(ParameterError):
            TrainConfig(batch_size=0)
        with pytest.raises(ParameterError):
            TrainConfig(max_epochs=0)
        with pytest.raises(ParameterError):
            TrainConfig(patience=0)
        with pytest.raises(ParameterError):
            TrainConfig(seed=-2)

    def test_to_dict_round_trips_through_ctor(self):
        cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=3, patience=2, seed=4)
        assert TrainConfig(**cfg.to_dict()) == cfg


class TestTrainLoop:
    def test_loss_decreases_on_learnable_data(self, rng):
        train_set, val_set = tiny_sets(rng, n_train=8, n_frames=30)
        cfg = TrainConfig(lr=0.01, batch_size=4, max_epochs=8, patience=8, seed=0)
        _, history = train(tiny_cfg(), cfg, train_set, val_set)
        assert history.n_epochs == 8
        assert history.train_loss[-1] < history.train_loss[0]
        assert history.best_epoch >= 1

    def test_reproducible_bit_for_bit(self, rng):
        train_set, val_set = tiny_sets(rng)
        cfg = TrainConfig(lr=0.01, batch_size=4, max_epochs=3, patience=5, seed=11)
        p1, h1 = train(tiny_cfg(seed=2), cfg, train_set, val_set)
        p2, h2 = train(tiny_cfg(seed=2), cfg, train_set, val_set)
        assert h1.train_loss == h2.train_loss
        assert h1.val_loss == h2.val_loss
        assert h1.best_epoch == h2.best_epoch
        for (_, a), (_, b) in zip(named_arrays(p1), named_arrays(p2)):
            np.testing.assert_array_equal(a, b)

    def test_shuffle_seed_matters(self, rng):
        train_set, val_set = tiny_sets(rng, n_train=8)
        base = dict(lr=0.01, batch_size=2, max_epochs=2, patience=5)
        _, h1 = train(tiny_cfg(), TrainConfig(seed=0, **base), train_set, val_set)
        _, h2 = train(tiny_cfg(), TrainConfig(seed=1, **base), train_set, val_set)
        assert h1.train_loss != h2.train_loss

    def test_early_stop_cuts_the_run_short(self, rng, monkeypatch):
        train_set, val_set = tiny_sets(rng)
        # force a val-loss sequence that never improves after epoch 1
        vals = iter([0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        monkeypatch.setattr(training_mod, "batch_loss", lambda p, b: next(vals))
        cfg = TrainConfig(lr=1e-6, batch_size=4, max_epochs=50, patience=2, seed=0)
        _, history = train(tiny_cfg(), cfg, train_set, val_set)
        assert history.n_epochs == 3  # epoch 1 best, epochs 2-3 bad, stop
        assert history.best_epoch == 1

    def test_best_epoch_params_are_returned(self, rng, monkeypatch):
        train_set, val_set = tiny_sets(rng)
        vals = iter([0.9, 0.2, 0.8, 0.9, 1.0])
        monkeypatch.setattr(training_mod, "batch_loss", lambda p, b: next(vals))
        recorded = {}
        real_step = _Adam.step

        def spying_step(self, params, grads):
            real_step(self, params, grads)
            recorded[self.step_count] = snapshot(params)

        monkeypatch.setattr(_Adam, "step", spying_step)
        cfg = TrainConfig(lr=0.01, batch_size=10, max_epochs=9, patience=3, seed=0)
        best, history = train(tiny_cfg(), cfg, train_set, val_set)
        assert history.best_epoch == 2
        # one batch per epoch, so params after step 2 are the epoch-2 params
        for (_, a), b in zip(named_arrays(best), recorded[2]):
            np.testing.assert_array_equal(a, b)

    def test_divergence_error_names_the_batch(self, rng, monkeypatch):
        train_set, val_set = tiny_sets(rng)

        def poisoned(params, batch):
            from speechresp.model import zeros_like_params

            return math.nan, zeros_like_params(params)

        monkeypatch.setattr(training_mod, "loss_and_grad", poisoned)
        with pytest.raises(DivergenceError, match=r"epoch 1, batch 1"):
            train(tiny_cfg(), TrainConfig(max_epochs=2), train_set, val_set)

    def test_empty_sets_rejected(self, rng):
        train_set, val_set = tiny_sets(rng)
        with pytest.raises(ParameterError):
            train(tiny_cfg(), TrainConfig(), [], val_set)
        with pytest.raises(ParameterError):
            train(tiny_cfg(), TrainConfig(), train_set, [])

    def test_epoch_log_written_as_jsonl(self, rng, tmp_path):
        train_set, val_set = tiny_sets(rng)
        log = tmp_path / "history.jsonl"
        cfg = TrainConfig(lr=0.01, batch_size=4, max_epochs=3, patience=5, seed=0)
        _, history = train(tiny_cfg(), cfg, train_set, val_set, log_path=log)
        lines = log.read_text().strip().split("\n")
        assert len(lines) == history.n_epochs
        for i, line in enumerate(lines, start=1):
            rec = json.loads(line)
            assert rec["epoch"] == i
            assert rec["train_loss"] == history.train_loss[i - 1]
            assert rec["val_loss"] == history.val_loss[i - 1]
            assert rec["seconds"] >= 0.0


class TestCheckpoints:
    def test_round_trip_preserves_everything(self, tmp_path):
        cfg = tiny_cfg(seed=6)
        params = init_params(cfg)
        p = tmp_path / "model.ckpt"
        save_checkpoint(params, cfg, p)
        loaded_params, loaded_cfg = load_checkpoint(p)
        assert loaded_cfg == cfg
        for (name, a), (_, b) in zip(named_arrays(params), named_arrays(loaded_params)):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        cfg = tiny_cfg()
        params = init_params(cfg)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, cfg, p1)
        lp, lc = load_checkpoint(p1)
        save_checkpoint(lp, lc, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_file_starts_with_magic(self, tmp_path):
        cfg = tiny_cfg()
        p = tmp_path / "a.ckpt"
        save_checkpoint(init_params(cfg), cfg, p)
        assert p.read_bytes()[:8] == CKPT_MAGIC == b"BRTHCKP1"

    def test_pipeline_metadata_round_trips(self, tmp_path):
        cfg = tiny_cfg()
        pipeline = {"features": "mfb", "seg_s": 30.0}
        p = tmp_path / "a.ckpt"
        save_checkpoint(init_params(cfg), cfg, p, pipeline=pipeline)
        meta = checkpoint_metadata(p)
        assert meta["pipeline"] == pipeline
        assert meta["model"] == cfg.to_dict()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "a.ckpt"
        p.write_bytes(b"NOTRIGHT" + bytes(40))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(p)

    def test_truncation_rejected(self, tmp_path):
        cfg = tiny_cfg()
        p = tmp_path / "a.ckpt"
        save_checkpoint(init_params(cfg), cfg, p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(TruncationError):
            load_checkpoint(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        cfg = tiny_cfg()
        p = tmp_path / "a.ckpt"
        save_checkpoint(init_params(cfg), cfg, p)
        p.write_bytes(p.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(p)

    def test_garbage_json_rejected(self, tmp_path):
        import struct as struct_mod

        p = tmp_path / "a.ckpt"
        payload = b"{not json"
        p.write_bytes(CKPT_MAGIC + struct_mod.pack("<I", len(payload)) + payload)
        with pytest.raises(FormatError, match="JSON"):
            load_checkpoint(p)

    def test_params_config_mismatch_refused_on_save(self, tmp_path):
        params = init_params(tiny_cfg())
        other = ModelConfig(branches=[BranchSpec(5)], lstm_units=4, embed_units=3)
        with pytest.raises(ParameterError):
            save_checkpoint(params, other, tmp_path / "a.ckpt")
