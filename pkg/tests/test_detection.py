import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidual import nn_core
from pidual.data import SynthConfig, generate_synthetic
from pidual.detection import (
    confidence_scores,
    detect,
    gate_scores,
    roc_auc,
    score_histogram,
)
from pidual.errors import ContractError
from pidual.model import MlpParams, build_model
from pidual.nn_core import MlpParams as Net


def dataset(n=60, seed=0, noise=0.3):
    return generate_synthetic(SynthConfig(n=n, feature_dim=3, num_classes=4, noise_rate=noise, seed=seed))


def model_for(ds, seed=0):
    return build_model(ds.feature_dim, ds.pi_dim, ds.num_classes, pred_hidden=(8,), pi_width=8, seed=seed)


def test_confidence_uniform_logits():
    ds = dataset()
    model = model_for(ds)
    model.prediction = Net(
        [np.zeros((ds.num_classes, ds.feature_dim))], [np.zeros(ds.num_classes)], [nn_core.IDENTITY]
    )
    scores = confidence_scores(model, ds)
    assert np.allclose(scores, 1.0 / ds.num_classes)


def test_confidence_saturated_on_observed_label():
    ds = dataset(n=20)
    model = model_for(ds)
    # a huge logit on whatever label is observed: route features through zero
    # weights and put mass on class 0, then restrict to samples labeled 0
    model.prediction = Net(
        [np.zeros((ds.num_classes, ds.feature_dim))],
        [np.array([60.0, 0.0, 0.0, 0.0])],
        [nn_core.IDENTITY],
    )
    scores = confidence_scores(model, ds)
    observed = ds.noisy_labels_of("train")
    assert np.all(scores[observed == 0] > 1.0 - 1e-12)


def test_confidence_matches_scalar_recomputation():
    ds = dataset(n=4, seed=3)
    model = model_for(ds, seed=3)
    scores = confidence_scores(model, ds)
    x, _ = ds.eval_inputs("train")
    labels = ds.noisy_labels_of("train")
    for i in range(4):
        logits, _ = nn_core.mlp_forward(model.prediction, x[i])
        exps = [math.exp(v - max(logits)) for v in logits]
        expected = exps[labels[i]] / sum(exps)
        assert abs(scores[i] - expected) < 1e-12


def test_gate_scores_forced_low_and_symmetric():
    ds = dataset(n=30)
    model = model_for(ds)
    model.gate_head.biases[-1][0] = -20.0
    assert np.all(gate_scores(model, ds) < 1e-6)
    zero_gate = MlpParams(
        [np.zeros((1, model.gate_head.in_dim))], [np.zeros(1)], [nn_core.SIGMOID]
    )
    model.gate_head = zero_gate
    assert np.allclose(gate_scores(model, ds), 0.5)


def test_gate_scores_match_scalar_sigmoid():
    ds = dataset(n=5, seed=7)
    model = model_for(ds, seed=7)
    scores = gate_scores(model, ds)
    x, a = ds.eval_inputs("train")
    for i in range(5):
        h, _ = nn_core.mlp_forward(model.pi_trunk, a[i])
        out, _ = nn_core.mlp_forward(model.gate_head, h)
        assert abs(scores[i] - out[0]) < 1e-12


def test_roc_auc_perfect_separation():
    assert roc_auc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([True, True, False, False])) == 1.0


def test_roc_auc_all_ties():
    assert roc_auc(np.full(6, 0.5), np.array([1, 0, 1, 0, 1, 0], dtype=bool)) == 0.5


def brute_force_auc(scores, positives):
    pos = scores[positives]
    neg = scores[~positives]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def test_roc_auc_matches_pair_counting_example():
    scores = np.array([0.6, 0.4, 0.5, 0.3])
    positives = np.array([True, False, True, False])
    assert roc_auc(scores, positives) == brute_force_auc(scores, positives)


@pytest.mark.parametrize("seed", range(10))
def test_roc_auc_equals_pair_counting_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 200))
    # quantized scores make ties frequent
    scores = np.round(rng.random(n), 1)
    positives = rng.random(n) < 0.4
    if positives.all() or not positives.any():
        positives[0] = True
        positives[-1] = False
    assert roc_auc(scores, positives) == pytest.approx(brute_force_auc(scores, positives), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_roc_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    scores = rng.standard_normal(n)
    positives = rng.random(n) < 0.5
    if positives.all() or not positives.any():
        positives[0] = True
        positives[-1] = False
    base = roc_auc(scores, positives)
    transformed = roc_auc(np.exp(2.0 * scores) + 3.0, positives)
    assert abs(base - transformed) < 1e-12
    # complement symmetry with tie handling
    assert abs(base + roc_auc(scores, ~positives) - 1.0) < 1e-12


def test_roc_auc_degenerate_classes():
    with pytest.raises(ContractError, match="positive"):
        roc_auc(np.array([0.1, 0.2]), np.array([False, False]))
    with pytest.raises(ContractError, match="negative"):
        roc_auc(np.array([0.1, 0.2]), np.array([True, True]))


def test_score_histogram_counts():
    scores = np.array([0.01, 0.99, 0.5, 0.5])
    wrong = np.array([False, True, False, True])
    edges, clean_counts, wrong_counts = score_histogram(scores, wrong)
    assert edges.shape == (21,)
    assert clean_counts.sum() == 2 and wrong_counts.sum() == 2


def test_detect_report_round_trip(tmp_path):
    ds = dataset(n=80, seed=9)
    model = model_for(ds, seed=9)
    for method in ("confidence", "gate"):
        report = detect(model, ds, method)
        assert 0.0 <= report.auc <= 1.0
        assert report.scores.shape[0] == ds.split_indices("train").size
        path = tmp_path / f"{method}.json"
        report.to_json(path)
        doc = json.loads(path.read_text())
        assert doc["method"] == method
        assert doc["auc"] == report.auc
        assert len(doc["clean_counts"]) == 20


def test_detect_unknown_method():
    ds = dataset(n=10)
    with pytest.raises(ContractError):
        detect(model_for(ds), ds, "entropy")
