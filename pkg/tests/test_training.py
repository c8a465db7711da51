import numpy as np
import pytest

from pidual import data as data_mod
from pidual.data import PiDataset, SynthConfig, generate_synthetic, split_dataset
from pidual.errors import ConfigError, ContractError
from pidual.model import (
    AblationFlags,
    MlpParams,
    ModelConfig,
    build_model,
    ce_baseline_flags,
)
from pidual import nn_core
from pidual.training import (
    GridSpec,
    TrainConfig,
    TrainRecord,
    evaluate,
    run_grid,
    run_trial,
    train,
)


def tiny_dataset(n=200, noise=0.2, seed=0, informativeness=1.0, k=2):
    ds = generate_synthetic(
        SynthConfig(
            n=n, feature_dim=4, num_classes=k, annotators=3, noise_rate=noise,
            pi_informativeness=informativeness, class_separation=3.0, seed=seed,
        )
    )
    return split_dataset(ds, 0.1, 0.2, seed=seed + 1)


def tiny_model(ds, flags=None, seed=0):
    return build_model(
        ds.feature_dim, ds.pi_dim, ds.num_classes,
        flags=flags or AblationFlags(), pred_hidden=(16,), pi_width=16, seed=seed,
    )


def tiny_cfg(**over):
    base = dict(
        epochs=3, batch_size=32, base_lr=0.1, decay_epochs=[], momentum=0.9,
        weight_decay=0.0, random_pi_length=0, seed=5,
    )
    base.update(over)
    return TrainConfig(**base)


def test_zero_epochs_rejected():
    ds = tiny_dataset()
    with pytest.raises(ConfigError):
        train(tiny_model(ds), ds, tiny_cfg(epochs=0))


def test_zero_lr_leaves_parameters_unchanged():
    ds = tiny_dataset()
    model = tiny_model(ds)
    before = {name: net.copy() for name, net in model.components().items()}
    result = train(model, ds, tiny_cfg(epochs=1, base_lr=0.0))
    for name, net in model.components().items():
        assert net.equals(before[name])
    assert len(result.record) == 1


def test_ce_sanity_run_on_separable_data():
    # clean labels equal the nearest-center rule, so the accuracy ceiling is 1
    ds = tiny_dataset(n=600, noise=0.0, seed=3)
    model = tiny_model(ds, flags=ce_baseline_flags(), seed=3)
    result = train(model, ds, tiny_cfg(epochs=30, batch_size=64))
    assert result.record.clean_test_acc[result.best_epoch] > 0.95


def test_training_deterministic():
    ds = tiny_dataset(seed=4)
    cfg = tiny_cfg(epochs=4)
    r1 = train(tiny_model(ds, seed=1), ds, cfg)
    r2 = train(tiny_model(ds, seed=1), ds, cfg)
    for col in (
        "train_acc_clean", "train_acc_wrong", "noisy_val_acc",
        "clean_test_acc", "mean_gate_clean", "mean_gate_wrong",
    ):
        a, b = getattr(r1.record, col), getattr(r2.record, col)
        assert np.array_equal(a, b, equal_nan=True)
    for name, net in r1.final_model.components().items():
        assert net.equals(r2.final_model.components()[name])


def test_early_stopping_selects_argmax_val_epoch():
    ds = tiny_dataset(n=400, noise=0.3, seed=6)
    result = train(tiny_model(ds, seed=2), ds, tiny_cfg(epochs=6))
    rec = result.record
    assert result.best_epoch == int(np.argmax(rec.noisy_val_acc))
    # re-evaluating the snapshot reproduces the recorded clean-test accuracy
    acc = evaluate(result.best_model, ds, data_mod.SPLIT_CLEAN_TEST, "clean", "prediction")
    assert acc == rec.clean_test_acc[result.best_epoch]


def constant_predictor(ds, cls):
    model = tiny_model(ds)
    bias = np.zeros(ds.num_classes)
    bias[cls] = 10.0
    model.prediction = MlpParams(
        [np.zeros((ds.num_classes, ds.feature_dim))], [bias], [nn_core.IDENTITY]
    )
    return model


def test_evaluate_constant_predictors():
    ds = tiny_dataset(n=100, noise=0.0, seed=8)
    labels = ds.clean_labels_of(data_mod.SPLIT_CLEAN_TEST)
    frac0 = float((labels == 0).mean())
    assert evaluate(constant_predictor(ds, 0), ds, "clean_test", "clean", "prediction") == frac0
    # a split whose labels are all the predicted class scores 1.0
    all0 = ds.split_indices("clean_test")[labels == 0]
    sub = PiDataset(
        features=ds.features[all0], pi=ds.pi[all0],
        noisy_labels=ds.noisy_labels[all0], clean_labels=ds.clean_labels[all0],
        split=np.zeros(all0.size, dtype=np.int8), num_classes=ds.num_classes,
    )
    assert evaluate(constant_predictor(ds, 0), sub, "train", "clean", "prediction") == 1.0
    assert evaluate(constant_predictor(ds, 1), sub, "train", "clean", "prediction") == 0.0


def test_evaluate_mixed_small_case():
    # 3 of 5 labels match the constant prediction -> 0.6
    features = np.zeros((5, 2))
    ds = PiDataset(
        features=features, pi=np.zeros((5, 1)),
        noisy_labels=np.array([0, 0, 0, 1, 1]), clean_labels=None,
        split=np.zeros(5, dtype=np.int8), num_classes=2,
    )
    model = build_model(2, 1, 2, pred_hidden=(4,), pi_width=4, seed=0)
    bias = np.array([10.0, 0.0])
    model.prediction = MlpParams([np.zeros((2, 2))], [bias], [nn_core.IDENTITY])
    assert evaluate(model, ds, "train", "noisy", "prediction") == 0.6


def test_evaluate_empty_split_raises():
    ds = tiny_dataset(n=50)
    sub = PiDataset(
        features=ds.features, pi=ds.pi, noisy_labels=ds.noisy_labels,
        clean_labels=ds.clean_labels, split=np.zeros(ds.n, dtype=np.int8),
        num_classes=ds.num_classes,
    )
    with pytest.raises(ContractError):
        evaluate(tiny_model(ds), sub, "clean_test", "clean", "prediction")


def test_ce_reduction_bit_identical():
    # no noise net + gate frozen at zero must walk the same path as plain CE
    ds = tiny_dataset(seed=9)
    cfg = tiny_cfg(epochs=1, weight_decay=1e-3, exempt_pi_nets_from_wd=True)

    frozen = tiny_model(ds, flags=AblationFlags(use_noise_net=False), seed=4)
    frozen.gate_head.biases[-1][0] = -1e9
    ce = tiny_model(ds, flags=ce_baseline_flags(), seed=4)

    r_frozen = train(frozen, ds, cfg)
    r_ce = train(ce, ds, cfg)
    assert r_frozen.final_model.prediction.equals(r_ce.final_model.prediction)
    assert r_frozen.final_model.noise_head.equals(r_ce.final_model.noise_head)
    assert r_frozen.final_model.pi_trunk.equals(r_ce.final_model.pi_trunk)


class RecordingDataset(PiDataset):
    """Counts accessor calls so tests can audit what the fitting path reads."""

    def __init__(self, ds):
        super().__init__(
            features=ds.features, pi=ds.pi, noisy_labels=ds.noisy_labels,
            clean_labels=ds.clean_labels, split=ds.split, num_classes=ds.num_classes,
        )
        object.__setattr__(self, "calls", [])

    def train_arrays(self):
        self.calls.append("train_arrays")
        return super().train_arrays()

    def eval_inputs(self, split):
        self.calls.append(f"eval_inputs:{split}")
        return super().eval_inputs(split)

    def clean_labels_of(self, split):
        self.calls.append(f"clean_labels_of:{split}")
        return super().clean_labels_of(split)

    def wrong_mask_of(self, split):
        self.calls.append(f"wrong_mask_of:{split}")
        return super().wrong_mask_of(split)


def test_fitting_path_never_reads_clean_labels():
    ds = RecordingDataset(tiny_dataset(seed=10))
    train(tiny_model(ds, seed=1), ds, tiny_cfg(epochs=2), collect_metrics=False)
    assert "train_arrays" in ds.calls
    assert not any(c.startswith("clean_labels_of") for c in ds.calls)
    assert not any(c.startswith("wrong_mask_of") for c in ds.calls)
    assert not any("clean_test" in c for c in ds.calls)


def test_clean_information_cannot_influence_fitting():
    # poisoning the evaluation-only fields must not move a single parameter
    base = tiny_dataset(seed=11)
    rng = np.random.default_rng(0)
    poisoned_clean = rng.permutation(base.clean_labels)
    features = base.features.copy()
    test_idx = base.split_indices(data_mod.SPLIT_CLEAN_TEST)
    features[test_idx] += rng.standard_normal((test_idx.size, base.feature_dim))
    poisoned = PiDataset(
        features=features, pi=base.pi, noisy_labels=base.noisy_labels,
        clean_labels=poisoned_clean, split=base.split, num_classes=base.num_classes,
    )
    cfg = tiny_cfg(epochs=3)
    r1 = train(tiny_model(base, seed=2), base, cfg)
    r2 = train(tiny_model(poisoned, seed=2), poisoned, cfg)
    assert np.array_equal(r1.record.noisy_val_acc, r2.record.noisy_val_acc)
    assert r1.best_epoch == r2.best_epoch
    for name, net in r1.final_model.components().items():
        assert net.equals(r2.final_model.components()[name])


def test_record_csv_round_trip(tmp_path):
    ds = tiny_dataset(seed=12)
    result = train(tiny_model(ds, seed=1), ds, tiny_cfg(epochs=2))
    path = tmp_path / "record.csv"
    result.record.to_csv(path)
    loaded = TrainRecord.from_csv(path)
    for col in ("train_acc_clean", "noisy_val_acc", "mean_gate_wrong"):
        assert np.array_equal(
            getattr(result.record, col), getattr(loaded, col), equal_nan=True
        )


def test_run_trial_applies_random_pi():
    ds = tiny_dataset(seed=13)
    result, ds_aug = run_trial(ds, ModelConfig(pred_hidden=(8,), pi_width=8), tiny_cfg(random_pi_length=5))
    assert ds_aug.pi_dim == ds.pi_dim + 5
    assert len(result.record) == 3


def test_single_point_grid_equals_single_train():
    ds = tiny_dataset(seed=14)
    base_cfg = tiny_cfg(epochs=2)
    model_cfg = ModelConfig(pred_hidden=(8,), pi_width=8)
    outcomes = run_grid(GridSpec({"base_lr": [0.1]}), ds, base_cfg, model_cfg)
    assert len(outcomes) == 1 and outcomes[0].status == "ok"

    from dataclasses import replace

    from pidual.seeding import derive_seed

    direct_cfg = replace(base_cfg, base_lr=0.1, seed=derive_seed(base_cfg.seed, "trial", 0))
    direct, _ = run_trial(ds, model_cfg, direct_cfg)
    assert np.array_equal(outcomes[0].record.noisy_val_acc, direct.record.noisy_val_acc)


def test_grid_ranking_consistent_with_noisy_val():
    ds = tiny_dataset(n=300, seed=15)
    grid = GridSpec({"base_lr": [0.2, 0.02], "random_pi_length": [0, 4]})
    outcomes = run_grid(grid, ds, tiny_cfg(epochs=2), ModelConfig(pred_hidden=(8,), pi_width=8))
    assert len(outcomes) == 4
    accs = [t.best_noisy_val_acc for t in outcomes if t.status == "ok"]
    assert accs == sorted(accs, reverse=True)


def test_grid_reruns_identically_and_failures_are_marked():
    ds = tiny_dataset(n=150, seed=16)
    grid = GridSpec({"batch_size": [16, -1]})
    cfg = tiny_cfg(epochs=1)
    model_cfg = ModelConfig(pred_hidden=(8,), pi_width=8)
    first = run_grid(grid, ds, cfg, model_cfg)
    second = run_grid(grid, ds, cfg, model_cfg)
    assert [t.status for t in first] == ["ok", "failed"]
    assert first[1].error
    assert first[0].best_noisy_val_acc == second[0].best_noisy_val_acc
    assert first[0].seed == second[0].seed


def test_grid_rejects_unknown_axis():
    with pytest.raises(ConfigError):
        GridSpec({"learning": [1]}).validate()


def test_grid_parallel_matches_serial():
    ds = tiny_dataset(n=150, seed=17)
    grid = GridSpec({"base_lr": [0.1, 0.02]})
    cfg = tiny_cfg(epochs=1)
    model_cfg = ModelConfig(pred_hidden=(8,), pi_width=8)
    serial = run_grid(grid, ds, cfg, model_cfg, workers=1)
    parallel = run_grid(grid, ds, cfg, model_cfg, workers=2)
    assert [t.index for t in serial] == [t.index for t in parallel]
    for a, b in zip(serial, parallel):
        assert a.best_noisy_val_acc == b.best_noisy_val_acc
        assert np.array_equal(a.record.noisy_val_acc, b.record.noisy_val_acc)


def test_nonfinite_loss_aborts_with_diagnostics():
    ds = tiny_dataset(seed=18)
    ds.features[ds.split_indices("train")[0], 0] = np.nan
    from pidual.errors import NumericError

    with pytest.raises(NumericError, match="epoch") as exc_info:
        train(tiny_model(ds, seed=1), ds, tiny_cfg(epochs=2))
    assert "batch" in str(exc_info.value)
