"""Training protocol: minibatch SGD with step decay, per-epoch metric
capture on the clean/wrong train subsets, early stopping at the best
noisy-validation epoch, and a grid-search runner.

Model selection never touches clean labels: the noisy validation accuracy is
the combined training-time output scored against the held-out noisy labels.
Clean-label metrics are recorded alongside for analysis only; pass
``collect_metrics=False`` to skip them entirely (the fitting path and the
selected model are unaffected).
"""
from __future__ import annotations

import concurrent.futures
import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import model as model_mod
from .data import PiDataset, RandomPiSpec, augment_random_pi
from .errors import ConfigError, ContractError, NumericError
from .model import ModelConfig, PiDualModel
from .nn_core import init_optimizer, sgd_step
from .seeding import derive_seed

HEAD_COMBINED = "combined"
HEAD_PREDICTION = "prediction"
HEAD_NOISE = "noise"


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    base_lr: float = 0.05
    decay_epochs: list[int] = field(default_factory=lambda: [30, 45])
    decay_factor: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    exempt_pi_nets_from_wd: bool = True
    random_pi_length: int = 8
    early_stopping: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.base_lr < 0:
            raise ConfigError("base_lr must be >= 0")
        if list(self.decay_epochs) != sorted(self.decay_epochs):
            raise ConfigError("decay_epochs must be sorted ascending")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must be in (0, 1]")
        if self.random_pi_length < 0:
            raise ConfigError("random_pi_length must be >= 0")


RECORD_COLUMNS = (
    "epoch",
    "train_acc_clean",
    "train_acc_wrong",
    "pred_acc_clean",
    "pred_acc_wrong",
    "noise_acc_clean",
    "noise_acc_wrong",
    "noisy_val_acc",
    "clean_test_acc",
    "mean_gate_clean",
    "mean_gate_wrong",
)


@dataclass
class TrainRecord:
    """Per-epoch metric table; every field is a float array of equal length."""

    train_acc_clean: np.ndarray
    train_acc_wrong: np.ndarray
    pred_acc_clean: np.ndarray
    pred_acc_wrong: np.ndarray
    noise_acc_clean: np.ndarray
    noise_acc_wrong: np.ndarray
    noisy_val_acc: np.ndarray
    clean_test_acc: np.ndarray
    mean_gate_clean: np.ndarray
    mean_gate_wrong: np.ndarray

    def __len__(self) -> int:
        return self.noisy_val_acc.shape[0]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RECORD_COLUMNS)
            for e in range(len(self)):
                row = [str(e)] + [
                    repr(float(getattr(self, col)[e])) for col in RECORD_COLUMNS[1:]
                ]
                writer.writerow(row)

    @staticmethod
    def from_csv(path: str | Path) -> "TrainRecord":
        with Path(path).open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != RECORD_COLUMNS:
                raise ContractError(f"{path}: unexpected training-record header")
            rows = [[float(v) for v in row] for row in reader]
        arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(RECORD_COLUMNS))
        cols = {name: arr[:, i] for i, name in enumerate(RECORD_COLUMNS)}
        cols.pop("epoch")
        return TrainRecord(**cols)


@dataclass
class TrainResult:
    best_model: PiDualModel
    final_model: PiDualModel
    record: TrainRecord
    best_epoch: int


def evaluate(
    model: PiDualModel,
    ds: PiDataset,
    split: str,
    on_labels: str = "noisy",
    head: str = HEAD_COMBINED,
) -> float:
    """Fraction of argmax matches of the chosen head on the chosen labels."""
    x, a = ds.eval_inputs(split)
    if on_labels == "noisy":
        labels = ds.noisy_labels_of(split)
    elif on_labels == "clean":
        labels = ds.clean_labels_of(split)
    else:
        raise ContractError(f"unknown label kind {on_labels!r}")
    if head == HEAD_PREDICTION:
        scores = model_mod.prediction_logits(model, x)
    elif head == HEAD_NOISE:
        scores = model_mod.noise_logits(model, x, a)
    elif head == HEAD_COMBINED:
        scores, _, _ = model_mod.forward_train(model, x, a)
    else:
        raise ContractError(f"unknown head {head!r}")
    return float((scores.argmax(axis=1) == labels).mean())


def _masked_acc(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    if mask.sum() == 0:
        return math.nan
    return float((scores.argmax(axis=1)[mask] == labels[mask]).mean())


def _masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    if mask.sum() == 0:
        return math.nan
    return float(values[mask].mean())


def train(
    model: PiDualModel,
    ds: PiDataset,
    cfg: TrainConfig,
    collect_metrics: bool = True,
) -> TrainResult:
    """Shuffled minibatch SGD over the train split for ``cfg.epochs``.

    Returns the snapshot at the best noisy-validation epoch (ties -> earliest),
    the final model and the per-epoch record. Deterministic given the seed.
    """
    cfg.validate()
    x_tr, a_tr, y_tr = ds.train_arrays()
    if x_tr.shape[0] == 0:
        raise ContractError("train split is empty")
    if x_tr.shape[1] != model.feature_dim or ds.num_classes != model.num_classes:
        raise ContractError("model dimensions do not match the dataset")
    expected_pi = model.pi_trunk.in_dim - (
        model.feature_dim if model.flags.noise_input == model_mod.NOISE_INPUT_PI_AND_X else 0
    )
    if a_tr.shape[1] != expected_pi:
        raise ContractError(
            f"model expects PI width {expected_pi}, dataset has {a_tr.shape[1]}"
        )

    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    states = {
        name: init_optimizer(
            comp,
            cfg.base_lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            decay_epochs=cfg.decay_epochs,
            decay_factor=cfg.decay_factor,
        )
        for name, comp in model.components().items()
    }
    exempt = set(model.pi_net_names()) if cfg.exempt_pi_nets_from_wd else set()

    has_val = ds.split_indices(data_mod.SPLIT_NOISY_VAL).size > 0
    has_clean = ds.has_clean_labels
    has_test = ds.split_indices(data_mod.SPLIT_CLEAN_TEST).size > 0
    wrong_train = (
        ds.wrong_mask_of(data_mod.SPLIT_TRAIN) if (has_clean and collect_metrics) else None
    )

    n = x_tr.shape[0]
    columns: dict[str, list[float]] = {c: [] for c in RECORD_COLUMNS[1:]}
    best_acc = -math.inf
    best_epoch = -1
    best_model: PiDualModel | None = None

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for b_idx, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            _, _, tape = model_mod.forward_train(model, x_tr[idx], a_tr[idx])
            loss = model_mod.training_loss(tape, y_tr[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
            grads = model_mod.backward_train(model, tape, y_tr[idx]).by_name()
            for name, comp in model.components().items():
                sgd_step(comp, grads[name], states[name], epoch, name in exempt)

        noisy_val = evaluate(model, ds, data_mod.SPLIT_NOISY_VAL) if has_val else math.nan
        row = {c: math.nan for c in RECORD_COLUMNS[1:]}
        row["noisy_val_acc"] = noisy_val
        if collect_metrics:
            if has_clean:
                combined, gate, _ = model_mod.forward_train(model, x_tr, a_tr)
                pred = model_mod.prediction_logits(model, x_tr)
                noise = model_mod.noise_logits(model, x_tr, a_tr)
                clean_mask = ~wrong_train
                row["train_acc_clean"] = _masked_acc(combined, y_tr, clean_mask)
                row["train_acc_wrong"] = _masked_acc(combined, y_tr, wrong_train)
                row["pred_acc_clean"] = _masked_acc(pred, y_tr, clean_mask)
                row["pred_acc_wrong"] = _masked_acc(pred, y_tr, wrong_train)
                row["noise_acc_clean"] = _masked_acc(noise, y_tr, clean_mask)
                row["noise_acc_wrong"] = _masked_acc(noise, y_tr, wrong_train)
                if model.flags.use_gate:
                    row["mean_gate_clean"] = _masked_mean(gate, clean_mask)
                    row["mean_gate_wrong"] = _masked_mean(gate, wrong_train)
            if has_clean and has_test:
                row["clean_test_acc"] = evaluate(
                    model, ds, data_mod.SPLIT_CLEAN_TEST, "clean", HEAD_PREDICTION
                )
        for col, value in row.items():
            columns[col].append(value)

        if has_val and noisy_val > best_acc:
            best_acc = noisy_val
            best_epoch = epoch
            best_model = model.copy()

    if best_model is None:
        best_model = model.copy()
        best_epoch = cfg.epochs - 1
    record = TrainRecord(**{c: np.asarray(v) for c, v in columns.items()})
    return TrainResult(best_model, model, record, best_epoch)


# ---------------------------------------------------------------------------
# Trials and grid search.
# ---------------------------------------------------------------------------

_TRAIN_AXES = {
    "epochs",
    "batch_size",
    "base_lr",
    "decay_factor",
    "momentum",
    "weight_decay",
    "random_pi_length",
    "exempt_pi_nets_from_wd",
}
_MODEL_AXES = {"pi_width", "share_first_layer"}
_FLAG_AXES = {"use_gate", "use_noise_net", "gate_space", "noise_input"}


@dataclass
class GridSpec:
    """Named hyperparameter axes; trials run over the cartesian product."""

    axes: dict[str, list]

    def validate(self) -> None:
        if not self.axes:
            raise ConfigError("grid must have at least one axis")
        for name, values in self.axes.items():
            if name not in _TRAIN_AXES | _MODEL_AXES | _FLAG_AXES:
                raise ConfigError(f"unknown grid axis {name!r}")
            if not values:
                raise ConfigError(f"grid axis {name!r} has no candidate values")

    def points(self) -> list[dict]:
        names = list(self.axes)
        return [
            dict(zip(names, combo))
            for combo in itertools.product(*(self.axes[n] for n in names))
        ]


@dataclass
class TrialOutcome:
    index: int
    params: dict
    seed: int
    status: str
    error: str = ""
    best_epoch: int = -1
    best_noisy_val_acc: float = math.nan
    clean_test_at_best: float = math.nan
    clean_test_final: float = math.nan
    record: TrainRecord | None = None


def apply_grid_point(
    base_cfg: TrainConfig, model_cfg: ModelConfig, params: dict
) -> tuple[TrainConfig, ModelConfig]:
    cfg_over = {k: v for k, v in params.items() if k in _TRAIN_AXES}
    cfg = replace(base_cfg, **cfg_over)
    model_over = {k: v for k, v in params.items() if k in _MODEL_AXES}
    flag_over = {k: v for k, v in params.items() if k in _FLAG_AXES}
    mcfg = replace(model_cfg, **model_over)
    if flag_over:
        mcfg = replace(mcfg, flags=replace(mcfg.flags, **flag_over))
    return cfg, mcfg


def run_trial(
    ds: PiDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    collect_metrics: bool = True,
) -> tuple[TrainResult, PiDataset]:
    """Augment the PI with the trial's random identifiers, build, train.

    Returns the result together with the augmented dataset (detection needs
    the same PI the model was trained on).
    """
    cfg.validate()
    ds_aug = augment_random_pi(
        ds, RandomPiSpec(cfg.random_pi_length, derive_seed(cfg.seed, "random_pi"))
    )
    model = model_cfg.build(
        ds_aug.feature_dim, ds_aug.pi_dim, ds_aug.num_classes, derive_seed(cfg.seed, "init")
    )
    return train(model, ds_aug, cfg, collect_metrics=collect_metrics), ds_aug


def _run_grid_point(
    args: tuple[int, dict, PiDataset, TrainConfig, ModelConfig]
) -> TrialOutcome:
    index, params, ds, base_cfg, model_cfg = args
    seed = derive_seed(base_cfg.seed, "trial", index)
    try:
        cfg, mcfg = apply_grid_point(base_cfg, model_cfg, params)
        cfg = replace(cfg, seed=seed)
        result, _ = run_trial(ds, mcfg, cfg)
    except Exception as exc:  # trial failures must not abort siblings
        return TrialOutcome(index, params, seed, status="failed", error=str(exc))
    rec = result.record
    return TrialOutcome(
        index,
        params,
        seed,
        status="ok",
        best_epoch=result.best_epoch,
        best_noisy_val_acc=float(rec.noisy_val_acc[result.best_epoch]),
        clean_test_at_best=float(rec.clean_test_acc[result.best_epoch]),
        clean_test_final=float(rec.clean_test_acc[-1]),
        record=rec,
    )


def run_grid(
    grid: GridSpec,
    ds: PiDataset,
    base_cfg: TrainConfig,
    model_cfg: ModelConfig,
    workers: int = 1,
) -> list[TrialOutcome]:
    """One train per grid point with a derived per-trial seed.

    Returns outcomes ranked by best noisy-validation accuracy (failed trials
    last); trials are independent and run in parallel when ``workers > 1``.
    """
    grid.validate()
    jobs = [
        (i, params, ds, base_cfg, model_cfg) for i, params in enumerate(grid.points())
    ]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_grid_point, jobs))
    else:
        outcomes = [_run_grid_point(job) for job in jobs]
    outcomes.sort(
        key=lambda t: (
            t.status != "ok",
            -(t.best_noisy_val_acc if math.isfinite(t.best_noisy_val_acc) else -math.inf),
            t.index,
        )
    )
    return outcomes
