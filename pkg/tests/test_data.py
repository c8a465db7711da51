import numpy as np
import pytest

from pidual import data as data_mod
from pidual.data import (
    PiDataset,
    RandomPiSpec,
    SynthConfig,
    annotator_permutations,
    augment_random_pi,
    generate_synthetic,
    load_csv,
    save_csv,
    split_dataset,
)
from pidual.errors import ConfigError, ContractError, DataFormatError


def test_zero_noise_rate_gives_clean_labels():
    ds = generate_synthetic(SynthConfig(n=500, noise_rate=0.0, seed=1))
    assert np.array_equal(ds.noisy_labels, ds.clean_labels)
    assert not ds.is_wrong.any()


def test_informativeness_zero_channels_constant():
    ds = generate_synthetic(SynthConfig(n=300, pi_informativeness=0.0, noise_rate=0.3, seed=2))
    annotators = 5
    reliability_col = ds.pi[:, annotators]
    switch_col = ds.pi[:, annotators + 1]
    assert np.unique(reliability_col).size == 1
    assert np.unique(switch_col).size == 1
    # the one-hot block still varies
    assert np.unique(ds.pi[:, :annotators], axis=0).shape[0] > 1


def test_realized_noise_rate_within_binomial_interval():
    # 99% interval for n=2000, p=0.4 is about +-0.028; the asserted band is wider
    ds = generate_synthetic(SynthConfig(n=2000, num_classes=4, noise_rate=0.4, seed=7))
    rate = float(ds.is_wrong.mean())
    assert 0.36 <= rate <= 0.44


def test_wrong_labels_are_genuinely_wrong():
    for mode in (data_mod.ERROR_MODE_UNIFORM, data_mod.ERROR_MODE_PERMUTATION):
        ds = generate_synthetic(SynthConfig(n=800, noise_rate=0.5, error_mode=mode, seed=3))
        wrong = ds.is_wrong
        assert wrong.any()
        assert np.all(ds.noisy_labels[wrong] != ds.clean_labels[wrong])


def test_permutation_mode_noise_is_function_of_annotator_and_label():
    cfg = SynthConfig(n=1000, noise_rate=0.4, error_mode=data_mod.ERROR_MODE_PERMUTATION, seed=9)
    ds = generate_synthetic(cfg)
    perms = annotator_permutations(cfg)
    wrong = ds.is_wrong
    recomputed = perms[ds.annotator_ids[wrong], ds.clean_labels[wrong]]
    assert np.array_equal(recomputed, ds.noisy_labels[wrong])


def test_generator_deterministic():
    cfg = SynthConfig(n=200, noise_rate=0.3, seed=42)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.pi, b.pi)
    assert np.array_equal(a.noisy_labels, b.noisy_labels)


def test_unreachable_noise_rate_rejected():
    cfg = SynthConfig(n=100, annotators=2, reliabilities=[0.9, 0.9], noise_rate=0.4)
    with pytest.raises(ConfigError, match="unreachable"):
        generate_synthetic(cfg)


def test_explicit_reliabilities_accepted_when_consistent():
    cfg = SynthConfig(n=4000, annotators=2, reliabilities=[0.9, 0.5], noise_rate=0.3, seed=5)
    ds = generate_synthetic(cfg)
    assert abs(ds.is_wrong.mean() - 0.3) < 0.05


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(n=10, num_classes=1))
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(n=10, noise_rate=1.0))
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(n=10, error_mode="typo"))


def test_augment_length_zero_is_identity():
    ds = generate_synthetic(SynthConfig(n=50, seed=0))
    assert augment_random_pi(ds, RandomPiSpec(0, seed=1)) is ds


def test_augment_appends_distinct_identifiers():
    ds = generate_synthetic(SynthConfig(n=100, seed=0))
    out = augment_random_pi(ds, RandomPiSpec(8, seed=3))
    assert out.pi_dim == ds.pi_dim + 8
    ids = out.pi[:, -8:]
    assert np.unique(ids, axis=0).shape[0] == 100


def test_augment_deterministic():
    ds = generate_synthetic(SynthConfig(n=60, seed=0))
    a = augment_random_pi(ds, RandomPiSpec(4, seed=11))
    b = augment_random_pi(ds, RandomPiSpec(4, seed=11))
    assert np.array_equal(a.pi, b.pi)


def test_split_zero_fractions_all_train():
    ds = generate_synthetic(SynthConfig(n=40, seed=0))
    out = split_dataset(ds, 0.0, 0.0, seed=1)
    assert out.split_indices(data_mod.SPLIT_TRAIN).size == 40


def test_split_counts():
    ds = generate_synthetic(SynthConfig(n=1000, seed=0))
    out = split_dataset(ds, 0.04, 0.2, seed=1)
    assert out.split_indices(data_mod.SPLIT_NOISY_VAL).size == 40
    assert out.split_indices(data_mod.SPLIT_CLEAN_TEST).size == 200
    assert out.split_indices(data_mod.SPLIT_TRAIN).size == 760


def test_split_partition_and_determinism():
    ds = generate_synthetic(SynthConfig(n=333, seed=0))
    a = split_dataset(ds, 0.1, 0.25, seed=5)
    b = split_dataset(ds, 0.1, 0.25, seed=5)
    assert np.array_equal(a.split, b.split)
    sizes = [a.split_indices(name).size for name in data_mod.SPLIT_NAMES]
    assert sum(sizes) == 333


def test_split_fraction_validation():
    ds = generate_synthetic(SynthConfig(n=10, seed=0))
    with pytest.raises(ConfigError):
        split_dataset(ds, 0.6, 0.5, seed=0)
    with pytest.raises(ConfigError):
        split_dataset(ds, -0.1, 0.0, seed=0)


def test_csv_round_trip_lossless(tmp_path):
    ds = generate_synthetic(SynthConfig(n=120, noise_rate=0.3, seed=13))
    ds = split_dataset(ds, 0.1, 0.2, seed=2)
    ds = augment_random_pi(ds, RandomPiSpec(3, seed=4))
    path = tmp_path / "ds.csv"
    save_csv(ds, path)
    loaded = load_csv(path, num_classes=ds.num_classes)
    assert np.array_equal(loaded.features, ds.features)
    assert np.array_equal(loaded.pi, ds.pi)
    assert np.array_equal(loaded.noisy_labels, ds.noisy_labels)
    assert np.array_equal(loaded.clean_labels, ds.clean_labels)
    assert np.array_equal(loaded.split, ds.split)
    assert loaded.num_classes == ds.num_classes


def test_csv_small_well_formed(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text(
        "x0,x1,a0,noisy_label\n1.0,2.0,0.5,0\n3.5,-1.0,0.25,1\n0.0,0.0,1.0,1\n",
        encoding="utf-8",
    )
    ds = load_csv(path)
    assert ds.n == 3 and ds.feature_dim == 2 and ds.pi_dim == 1
    assert not ds.has_clean_labels
    assert np.array_equal(ds.noisy_labels, [0, 1, 1])
    assert ds.features[1, 0] == 3.5


def test_csv_missing_noisy_label_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,a0,label\n1.0,1.0,0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="noisy_label"):
        load_csv(path)


def test_csv_non_numeric_cell_reports_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,a0,noisy_label\n1.0,1.0,0\noops,1.0,1\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="row 3"):
        load_csv(path)


def test_csv_label_out_of_range(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,a0,noisy_label\n1.0,1.0,5\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="out of range"):
        load_csv(path, num_classes=3)


def test_clean_labels_gated_behind_eval_accessors():
    ds = generate_synthetic(SynthConfig(n=30, noise_rate=0.2, seed=0))
    no_clean = PiDataset(
        features=ds.features,
        pi=ds.pi,
        noisy_labels=ds.noisy_labels,
        clean_labels=None,
        split=ds.split,
        num_classes=ds.num_classes,
    )
    with pytest.raises(ContractError):
        no_clean.clean_labels_of(data_mod.SPLIT_TRAIN)
    with pytest.raises(ContractError):
        no_clean.wrong_mask_of(data_mod.SPLIT_TRAIN)
