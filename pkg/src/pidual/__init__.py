"""Noisy-label learning with privileged information.

A gated dual-network architecture separates the learning paths of clean and
wrong labels during training, keeps inference PI-free, detects wrong labels
post-training, and comes with an exactly-solvable linear risk analysis.
"""

from .data import (
    PiDataset,
    RandomPiSpec,
    SynthConfig,
    augment_random_pi,
    generate_synthetic,
    load_csv,
    save_csv,
    split_dataset,
)
from .detection import DetectionReport, confidence_scores, detect, gate_scores, roc_auc
from .linear_risk import (
    LinearRiskSetup,
    RiskBreakdown,
    closed_form_risk_ols,
    closed_form_risk_pidual,
    compare_risks,
    make_setup,
    monte_carlo_risk,
    ols_fit,
    pidual_fit,
)
from .model import (
    AblationFlags,
    ModelConfig,
    PiDualModel,
    backward_train,
    build_model,
    ce_baseline_flags,
    forward_infer,
    forward_train,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    GridSpec,
    TrainConfig,
    TrainRecord,
    TrainResult,
    evaluate,
    run_grid,
    run_trial,
    train,
)

__version__ = "0.1.0"
