"""Post-training wrong-label detection on the train split.

Two scoring methods: the prediction network's confidence on the observed
noisy label (low confidence suggests a wrong label) and the gate output
(high gate suggests a wrong label). Scores are oriented artifact-wide so
that higher means more likely wrong before computing the ROC-AUC, with ties
contributing one half per pair.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as model_mod
from .data import SPLIT_TRAIN, PiDataset
from .errors import ContractError
from .model import PiDualModel

HISTOGRAM_BINS = 20


@dataclass
class DetectionReport:
    method: str
    scores: np.ndarray
    auc: float
    bin_edges: np.ndarray
    clean_counts: np.ndarray
    wrong_counts: np.ndarray

    def to_json(self, path: str | Path) -> None:
        doc = {
            "method": self.method,
            "auc": self.auc,
            "bin_edges": self.bin_edges.tolist(),
            "clean_counts": self.clean_counts.tolist(),
            "wrong_counts": self.wrong_counts.tolist(),
            "num_scores": int(self.scores.shape[0]),
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def confidence_scores(model: PiDualModel, ds: PiDataset) -> np.ndarray:
    """Probability the prediction head assigns to each observed train label."""
    x, _ = ds.eval_inputs(SPLIT_TRAIN)
    probs = model_mod.forward_infer(model, x)
    return probs[np.arange(x.shape[0]), ds.noisy_labels_of(SPLIT_TRAIN)]


def gate_scores(model: PiDualModel, ds: PiDataset) -> np.ndarray:
    """Gate output per train sample; higher means more likely wrong."""
    x, a = ds.eval_inputs(SPLIT_TRAIN)
    return model_mod.gate_values(model, x, a)


def roc_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Probability a random positive outranks a random negative (ties half).

    Rank-statistic implementation: sort once, average ranks within tied
    groups, O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ContractError("scores and positives must be equal-length vectors")
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0:
        raise ContractError("no positive samples: AUC undefined")
    if n_neg == 0:
        raise ContractError("no negative samples: AUC undefined")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    rank_sum = ranks[positives].sum()
    u_stat = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def score_histogram(
    scores: np.ndarray, wrong: np.ndarray, bins: int = HISTOGRAM_BINS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed uniform bins on [0, 1], counted separately for clean and wrong."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    clean_counts, _ = np.histogram(scores[~wrong], bins=edges)
    wrong_counts, _ = np.histogram(scores[wrong], bins=edges)
    return edges, clean_counts, wrong_counts


def detect(model: PiDualModel, ds: PiDataset, method: str) -> DetectionReport:
    """Score the train split and report AUC against the wrong-label ground truth."""
    if method == "confidence":
        scores = confidence_scores(model, ds)
        wrongness = 1.0 - scores
    elif method == "gate":
        scores = gate_scores(model, ds)
        wrongness = scores
    else:
        raise ContractError(f"unknown detection method {method!r}")
    wrong = ds.wrong_mask_of(SPLIT_TRAIN)
    auc = roc_auc(wrongness, wrong)
    edges, clean_counts, wrong_counts = score_histogram(scores, wrong)
    return DetectionReport(method, scores, auc, edges, clean_counts, wrong_counts)
