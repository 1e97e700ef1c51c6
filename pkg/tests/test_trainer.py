import math

import numpy as np
import pytest

from xraybench.augment import AugmentationConfig
from xraybench.dataset import scan_dataset, stratified_split
from xraybench.errors import ConfigurationError, TrainingDivergedError
from xraybench.model_zoo import HeadSpec, spec_for, build_model
from xraybench.preprocess import PreprocessConfig
from xraybench.trainer import (
    EpochRecord,
    LrSchedule,
    LrState,
    TrainConfig,
    TrainingHistory,
    average_final_metrics,
    decay_learning_rate,
    evaluate_model,
    run_experiment,
    set_determinism,
    train,
)

SMALL_PRE = PreprocessConfig(target_size=32, clahe_tile_grid=(4, 4))
NO_AUG = AugmentationConfig.identity()


def smoke_config(**overrides) -> TrainConfig:
    base = dict(
        batch_size=4,
        epochs=2,
        train_steps_per_epoch=2,
        val_steps_per_epoch=1,
        lr_initial=1e-3,
        lr_floor=1e-4,
        repetitions=1,
        seed=7,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_model(seed=0):
    set_determinism(seed)
    spec = spec_for(
        "BaselineCNN",
        input_size=32,
        conv_filters=(4, 8, 8),
        head=HeadSpec(flatten_or_pool="flatten", hidden_units=8),
    )
    return build_model(spec)


@pytest.fixture
def tiny_splits(tree_factory):
    ds, _ = scan_dataset(tree_factory(8, 8, seed=21))
    return stratified_split(ds, 0.5, seed=3)


class TestLearningRateDecay:
    def test_plateau_decays_by_factor_ten(self):
        state = LrState(learning_rate=1e-5, epochs_without_improvement=10)
        assert decay_learning_rate(state, "plateau") == pytest.approx(1e-6)

    def test_floor_clamps(self):
        state = LrState(learning_rate=1e-6, epochs_without_improvement=10)
        assert decay_learning_rate(state, "plateau", floor=1e-6) == 1e-6

    def test_no_trigger_keeps_rate(self):
        state = LrState(learning_rate=1e-5, epochs_without_improvement=3)
        assert decay_learning_rate(state, "plateau") == 1e-5

    def test_fixed_step_fires_only_at_epoch(self):
        state = LrState(learning_rate=1e-5, epoch=149)
        assert decay_learning_rate(state, "fixed_step", fixed_epoch=150) == 1e-5
        state.epoch = 150
        assert decay_learning_rate(state, "fixed_step", fixed_epoch=150) == pytest.approx(1e-6)

    def test_unknown_policy_rejected(self):
        with pytest.raises(ConfigurationError):
            decay_learning_rate(LrState(1e-5), "cosine")

    def test_schedule_keeps_constant_without_plateau(self):
        cfg = smoke_config(lr_initial=1e-5, lr_floor=1e-6, plateau_patience=10)
        schedule = LrSchedule(cfg)
        # strictly improving validation loss: no decay over 300 epochs
        for epoch in range(1, 301):
            lr = schedule.on_epoch_end(epoch, val_loss=1.0 / epoch)
            assert lr == 1e-5

    def test_schedule_decays_after_patience_and_resets(self):
        cfg = smoke_config(lr_initial=1e-2, lr_floor=1e-5, plateau_patience=3)
        schedule = LrSchedule(cfg)
        rates = [schedule.on_epoch_end(epoch, val_loss=5.0) for epoch in range(1, 9)]
        # first epoch sets the best; decay fires 3 stale epochs later, then again
        assert rates == [1e-2, 1e-2, 1e-2, pytest.approx(1e-3)] + [pytest.approx(1e-3)] * 2 + [
            pytest.approx(1e-4)
        ] + [pytest.approx(1e-4)]


class TestTrainConfig:
    def test_defaults_match_benchmark_protocol(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.epochs) == (32, 300)
        assert (cfg.train_steps_per_epoch, cfg.val_steps_per_epoch) == (159, 109)
        assert (cfg.adam_beta1, cfg.adam_beta2) == (0.9, 0.999)
        assert (cfg.lr_initial, cfg.lr_floor) == (1e-5, 1e-6)
        assert cfg.repetitions == 3

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(lr_floor=1e-3, lr_initial=1e-5)
        with pytest.raises(ConfigurationError):
            TrainConfig(adam_beta1=1.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(lr_decay_policy="linear")

    def test_round_trip(self):
        cfg = smoke_config()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestTrain:
    def test_zero_epochs_is_noop(self, tiny_splits):
        handle = tiny_model()
        before = [w.numpy().copy() for w in handle.model.weights]
        history, same = train(handle, tiny_splits, smoke_config(epochs=0), SMALL_PRE, NO_AUG)
        assert len(history) == 0
        assert same is handle
        for b, a in zip(before, handle.model.weights):
            assert np.array_equal(b, a.numpy())

    def test_history_fully_populated(self, tiny_splits):
        history, _ = train(tiny_model(), tiny_splits, smoke_config(epochs=3), SMALL_PRE, NO_AUG)
        assert len(history) == 3
        for i, record in enumerate(history.records, start=1):
            assert record.epoch == i
            assert 0.0 <= record.train_accuracy <= 1.0
            assert 0.0 <= record.val_accuracy <= 1.0
            assert record.train_loss >= 0.0
            assert record.val_loss >= 0.0

    def test_learning_rate_column_non_increasing_and_bounded(self, tiny_splits):
        cfg = smoke_config(epochs=6, plateau_patience=1, lr_initial=1e-3, lr_floor=1e-5)
        history, _ = train(tiny_model(), tiny_splits, cfg, SMALL_PRE, NO_AUG)
        rates = history.column("learning_rate")
        assert all(b <= a for a, b in zip(rates, rates[1:]))
        assert all(cfg.lr_floor <= r <= cfg.lr_initial for r in rates)

    def test_mismatched_input_size_rejected(self, tiny_splits):
        with pytest.raises(ConfigurationError, match="input size"):
            train(tiny_model(), tiny_splits, smoke_config(), PreprocessConfig(target_size=64),
                  NO_AUG)

    def test_non_finite_loss_aborts_with_diagnostics(self, tiny_splits):
        handle = tiny_model()
        kernel = handle.model.get_layer("head_output").kernel
        poisoned = kernel.numpy()
        poisoned[0, 0] = np.nan
        kernel.assign(poisoned)
        with pytest.raises(TrainingDivergedError) as err:
            train(handle, tiny_splits, smoke_config(), SMALL_PRE, NO_AUG)
        assert err.value.epoch == 1
        assert err.value.step == 1
        assert err.value.learning_rate == pytest.approx(1e-3)

    def test_validation_evaluation_is_repeatable(self, tiny_splits):
        handle = tiny_model()
        first = evaluate_model(handle, tiny_splits.validation, SMALL_PRE, 4, steps=2)
        second = evaluate_model(handle, tiny_splits.validation, SMALL_PRE, 4, steps=2)
        assert first == second

    def test_loss_decreases_on_training_fixture(self, tiny_splits):
        history, _ = train(
            tiny_model(), tiny_splits, smoke_config(epochs=8, train_steps_per_epoch=4),
            SMALL_PRE, NO_AUG,
        )
        assert history.records[-1].train_loss < history.records[0].train_loss


class TestHistorySerialization:
    def test_csv_round_trip(self, tmp_path):
        history = TrainingHistory(
            records=(
                EpochRecord(1, 0.5, 0.75, 0.6, 0.7, 1e-3),
                EpochRecord(2, 0.25, 0.875, 0.5, 0.8, 1e-4),
            )
        )
        path = tmp_path / "history.csv"
        history.to_csv(path)
        assert TrainingHistory.from_csv(path) == history

    def test_final_of_empty_history_raises(self):
        with pytest.raises(ValueError):
            TrainingHistory().final()


class TestRunExperiment:
    def test_single_repetition_average_equals_that_run(self, tiny_splits, tmp_path):
        spec = spec_for("BaselineCNN", input_size=32, conv_filters=(4, 8, 8),
                        head=HeadSpec(flatten_or_pool="flatten", hidden_units=8))
        result = run_experiment(spec, tiny_splits, smoke_config(), SMALL_PRE, NO_AUG,
                                out_dir=tmp_path)
        assert result.architecture == "BaselineCNN"
        assert len(result.histories) == 1
        final = result.histories[0].final()
        assert result.final_metrics["val_accuracy"] == pytest.approx(final.val_accuracy)
        assert result.final_metrics["train_loss"] == pytest.approx(final.train_loss)

    def test_artifacts_persisted_per_repetition(self, tiny_splits, tmp_path):
        spec = spec_for("BaselineCNN", input_size=32, conv_filters=(4, 8, 8),
                        head=HeadSpec(flatten_or_pool="flatten", hidden_units=8))
        result = run_experiment(spec, tiny_splits, smoke_config(repetitions=2), SMALL_PRE,
                                NO_AUG, out_dir=tmp_path)
        assert len(result.run_dirs) == 2
        for rep, rep_dir in enumerate(result.run_dirs):
            assert rep_dir == tmp_path / "BaselineCNN" / f"rep{rep}"
            assert (rep_dir / "history.csv").exists()
            assert (rep_dir / "manifest.json").exists()
            assert (rep_dir / "last.weights.h5").exists()
            assert (rep_dir / "best.weights.h5").exists()
            assert len(TrainingHistory.from_csv(rep_dir / "history.csv")) == 2

    def test_arithmetic_mean_of_final_metrics(self):
        def history_with(val_acc):
            return TrainingHistory(records=(EpochRecord(1, 0.3, 0.8, 0.4, val_acc, 1e-3),))

        averaged = average_final_metrics(
            [history_with(0.95), history_with(0.96), history_with(0.97)]
        )
        assert averaged["val_accuracy"] == pytest.approx(0.96)

    def test_rerun_with_same_seed_reproduces_metrics(self, tiny_splits, tmp_path):
        spec = spec_for("BaselineCNN", input_size=32, conv_filters=(4, 8, 8),
                        head=HeadSpec(flatten_or_pool="flatten", hidden_units=8))
        cfg = smoke_config(deterministic=True)
        first = run_experiment(spec, tiny_splits, cfg, SMALL_PRE, NO_AUG)
        second = run_experiment(spec, tiny_splits, cfg, SMALL_PRE, NO_AUG)
        for key, value in first.final_metrics.items():
            assert abs(value - second.final_metrics[key]) <= 1e-6

    def test_interrupted_repetition_keeps_partial_history(self, tiny_splits, tmp_path,
                                                          monkeypatch):
        import xraybench.trainer as trainer_mod

        spec = spec_for("BaselineCNN", input_size=32, conv_filters=(4, 8, 8),
                        head=HeadSpec(flatten_or_pool="flatten", hidden_units=8))
        calls = {"n": 0}
        real = trainer_mod.evaluate_model

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] >= 2:
                raise RuntimeError("simulated crash")
            return real(*args, **kwargs)

        monkeypatch.setattr(trainer_mod, "evaluate_model", flaky)
        with pytest.raises(RuntimeError, match="simulated crash"):
            run_experiment(spec, tiny_splits, smoke_config(epochs=4), SMALL_PRE, NO_AUG,
                           out_dir=tmp_path)
        persisted = TrainingHistory.from_csv(tmp_path / "BaselineCNN" / "rep0" / "history.csv")
        assert len(persisted) == 1
