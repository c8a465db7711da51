"""Gated dual-network architecture.

Training-time output combines a prediction network on the regular features
with a noise network on the privileged information (PI), blended per sample
by a sigmoid gate that also reads the PI:

    combined = (1 - gate) * prediction_logits + gate * noise_logits

The noise network is a three-layer ReLU MLP; the gating network shares the
noise network's first layer (the "pi trunk") by default and adds two more
layers ending in a sigmoid. Inference uses the prediction network alone, so
test-time outputs are provably independent of PI and of the noise/gate
parameters.

Ablation switches: ``use_gate=False`` drops the gate and adds the logits;
``use_noise_net=False`` zeroes the noise logits so only the gate can damp a
sample's loss; ``gate_space="probability"`` mixes softmax outputs instead of
logits (the loss becomes -log of the mixed probability); and
``noise_input="pi_and_x"`` feeds the concatenation [pi, features] to the
noise path, in which case the shared trunk (and therefore the gate) sees the
features too.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .errors import ContractError, DataFormatError, ShapeError
from .nn_core import (
    Gradients,
    MlpParams,
    Tape,
    init_mlp,
    mlp_backward,
    mlp_forward,
    softmax,
)
from .seeding import derive_seed

GATE_SPACE_LOGIT = "logit"
GATE_SPACE_PROBABILITY = "probability"
NOISE_INPUT_PI = "pi_only"
NOISE_INPUT_PI_AND_X = "pi_and_x"


@dataclass
class AblationFlags:
    use_gate: bool = True
    use_noise_net: bool = True
    gate_space: str = GATE_SPACE_LOGIT
    noise_input: str = NOISE_INPUT_PI

    def __post_init__(self) -> None:
        if self.gate_space not in (GATE_SPACE_LOGIT, GATE_SPACE_PROBABILITY):
            raise ContractError(f"unknown gate space {self.gate_space!r}")
        if self.noise_input not in (NOISE_INPUT_PI, NOISE_INPUT_PI_AND_X):
            raise ContractError(f"unknown noise input {self.noise_input!r}")


def ce_baseline_flags() -> AblationFlags:
    """Plain cross-entropy on the prediction network: no gate, no noise path."""
    return AblationFlags(use_gate=False, use_noise_net=False)


@dataclass
class PiDualModel:
    """Parameter bundle for the three sub-networks.

    The noise network is ``noise_head`` stacked on ``pi_trunk``; the gate is
    ``gate_head`` stacked on the shared ``pi_trunk`` (or on its own
    ``gate_trunk`` when ``share_first_layer`` is off).
    """

    prediction: MlpParams
    pi_trunk: MlpParams
    noise_head: MlpParams
    gate_head: MlpParams
    gate_trunk: MlpParams | None
    flags: AblationFlags
    share_first_layer: bool = True
    feature_dim: int = 0
    pi_dim: int = 0
    num_classes: int = 0

    def copy(self) -> "PiDualModel":
        return copy.deepcopy(self)

    def components(self) -> dict[str, MlpParams]:
        comps = {
            "prediction": self.prediction,
            "pi_trunk": self.pi_trunk,
            "noise_head": self.noise_head,
            "gate_head": self.gate_head,
        }
        if self.gate_trunk is not None:
            comps["gate_trunk"] = self.gate_trunk
        return comps

    def pi_net_names(self) -> list[str]:
        """Components belonging to the noise/gate side (weight-decay exemption)."""
        names = ["pi_trunk", "noise_head", "gate_head"]
        if self.gate_trunk is not None:
            names.append("gate_trunk")
        return names


def build_model(
    feature_dim: int,
    pi_dim: int,
    num_classes: int,
    flags: AblationFlags | None = None,
    pred_hidden: tuple[int, ...] = (64, 64),
    pi_width: int = 64,
    share_first_layer: bool = True,
    seed: int = 0,
) -> PiDualModel:
    flags = flags or AblationFlags()
    noise_in = pi_dim + (feature_dim if flags.noise_input == NOISE_INPUT_PI_AND_X else 0)
    pred_dims = [feature_dim, *pred_hidden, num_classes]
    pred_acts = [nn_core.RELU] * len(pred_hidden) + [nn_core.IDENTITY]
    prediction = init_mlp(pred_dims, pred_acts, derive_seed(seed, "prediction"))
    pi_trunk = init_mlp([noise_in, pi_width], [nn_core.RELU], derive_seed(seed, "pi_trunk"))
    noise_head = init_mlp(
        [pi_width, pi_width, num_classes],
        [nn_core.RELU, nn_core.IDENTITY],
        derive_seed(seed, "noise_head"),
    )
    gate_head = init_mlp(
        [pi_width, pi_width, 1], [nn_core.RELU, nn_core.SIGMOID], derive_seed(seed, "gate_head")
    )
    gate_trunk = None
    if not share_first_layer:
        gate_trunk = init_mlp([noise_in, pi_width], [nn_core.RELU], derive_seed(seed, "gate_trunk"))
    return PiDualModel(
        prediction=prediction,
        pi_trunk=pi_trunk,
        noise_head=noise_head,
        gate_head=gate_head,
        gate_trunk=gate_trunk,
        flags=flags,
        share_first_layer=share_first_layer,
        feature_dim=feature_dim,
        pi_dim=pi_dim,
        num_classes=num_classes,
    )


@dataclass
class ModelConfig:
    """Architecture knobs decoupled from any concrete dataset dimensions."""

    pred_hidden: tuple[int, ...] = (64, 64)
    pi_width: int = 64
    share_first_layer: bool = True
    flags: AblationFlags = field(default_factory=AblationFlags)

    def build(self, feature_dim: int, pi_dim: int, num_classes: int, seed: int) -> "PiDualModel":
        return build_model(
            feature_dim,
            pi_dim,
            num_classes,
            flags=self.flags,
            pred_hidden=tuple(self.pred_hidden),
            pi_width=self.pi_width,
            share_first_layer=self.share_first_layer,
            seed=seed,
        )


@dataclass
class ModelTape:
    """Everything ``backward_train`` needs from one training forward pass."""

    model: PiDualModel = field(repr=False)
    batch_size: int = 0
    pred_tape: Tape | None = field(default=None, repr=False)
    trunk_tape: Tape | None = field(default=None, repr=False)
    noise_tape: Tape | None = field(default=None, repr=False)
    gate_trunk_tape: Tape | None = field(default=None, repr=False)
    gate_tape: Tape | None = field(default=None, repr=False)
    pred_logits: np.ndarray | None = field(default=None, repr=False)
    noise_logits: np.ndarray | None = field(default=None, repr=False)
    gate: np.ndarray | None = field(default=None, repr=False)
    pred_probs: np.ndarray | None = field(default=None, repr=False)
    noise_probs: np.ndarray | None = field(default=None, repr=False)
    mixed: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ModelGradients:
    """Mean-over-batch loss gradients, one buffer per sub-network component."""

    prediction: Gradients
    pi_trunk: Gradients
    noise_head: Gradients
    gate_head: Gradients
    gate_trunk: Gradients | None

    def by_name(self) -> dict[str, Gradients]:
        out = {
            "prediction": self.prediction,
            "pi_trunk": self.pi_trunk,
            "noise_head": self.noise_head,
            "gate_head": self.gate_head,
        }
        if self.gate_trunk is not None:
            out["gate_trunk"] = self.gate_trunk
        return out


def _noise_input(model: PiDualModel, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    if model.flags.noise_input == NOISE_INPUT_PI_AND_X:
        return np.hstack([a, x])
    return a


def forward_train(
    model: PiDualModel, x: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None, ModelTape]:
    """Training-time forward pass on a batch.

    Returns (combined, gate, tape). ``combined`` holds logits, except in the
    probability-space variant where it holds the mixed class probabilities.
    ``gate`` is None when the gating network is ablated.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if x.shape[0] != a.shape[0]:
        raise ShapeError("feature and PI batches must have the same length")
    flags = model.flags
    tape = ModelTape(model=model, batch_size=x.shape[0])

    tape.pred_logits, tape.pred_tape = mlp_forward(model.prediction, x)
    f = tape.pred_logits

    trunk_out = None
    need_trunk = flags.use_noise_net or (flags.use_gate and model.share_first_layer)
    if need_trunk:
        trunk_out, tape.trunk_tape = mlp_forward(model.pi_trunk, _noise_input(model, x, a))

    if flags.use_noise_net:
        tape.noise_logits, tape.noise_tape = mlp_forward(model.noise_head, trunk_out)
    else:
        tape.noise_logits = np.zeros_like(f)
    eps = tape.noise_logits

    g = None
    if flags.use_gate:
        if model.share_first_layer:
            gate_in = trunk_out
        else:
            gate_in, tape.gate_trunk_tape = mlp_forward(
                model.gate_trunk, _noise_input(model, x, a)
            )
        gate_col, tape.gate_tape = mlp_forward(model.gate_head, gate_in)
        g = gate_col[:, 0]
        tape.gate = g

    if not flags.use_gate:
        combined = f + eps
    elif flags.gate_space == GATE_SPACE_LOGIT:
        combined = (1.0 - g)[:, None] * f + g[:, None] * eps
    else:
        tape.pred_probs = softmax(f)
        tape.noise_probs = softmax(eps)
        combined = (1.0 - g)[:, None] * tape.pred_probs + g[:, None] * tape.noise_probs
    tape.mixed = combined
    return combined, g, tape


def training_loss(tape: ModelTape, labels: np.ndarray) -> float:
    """Mean cross-entropy of the combined output against the noisy labels."""
    labels = np.asarray(labels)
    if tape.model.flags.use_gate and tape.model.flags.gate_space == GATE_SPACE_PROBABILITY:
        rows = np.arange(labels.shape[0])
        return float(-np.log(tape.mixed[rows, labels]).mean())
    losses, _ = nn_core.softmax_ce_batch(tape.mixed, labels)
    return float(losses.mean())


def backward_train(model: PiDualModel, tape: ModelTape, labels: np.ndarray) -> ModelGradients:
    """Exact gradients of the mean combined-output cross-entropy.

    Includes the gate path d/dg[(1-g)f + g*eps] = eps - f, and accumulates
    the shared first layer's gradient from both the noise and gate paths.
    """
    if tape.model is not model:
        raise ContractError("tape was produced by a different model")
    labels = np.asarray(labels)
    b = tape.batch_size
    if labels.shape != (b,):
        raise ShapeError("one label per batch row required")
    flags = model.flags
    f, eps, g = tape.pred_logits, tape.noise_logits, tape.gate
    rows = np.arange(b)

    if not flags.use_gate:
        _, dlogits = nn_core.softmax_ce_batch(tape.mixed, labels)
        u = dlogits / b
        d_pred, d_noise_out, d_gate_out = u, u, None
    elif flags.gate_space == GATE_SPACE_LOGIT:
        _, dlogits = nn_core.softmax_ce_batch(tape.mixed, labels)
        u = dlogits / b
        d_pred = (1.0 - g)[:, None] * u
        d_noise_out = g[:, None] * u
        d_gate_out = ((eps - f) * u).sum(axis=1)
    else:
        p_f, p_e = tape.pred_probs, tape.noise_probs
        coef = -1.0 / (b * tape.mixed[rows, labels])  # dL/d(mixed prob of the label)
        dpf = np.zeros_like(p_f)
        dpf[rows, labels] = (1.0 - g) * coef
        d_pred = p_f * (dpf - (p_f * dpf).sum(axis=1, keepdims=True))
        dpe = np.zeros_like(p_e)
        dpe[rows, labels] = g * coef
        d_noise_out = p_e * (dpe - (p_e * dpe).sum(axis=1, keepdims=True))
        d_gate_out = coef * (p_e[rows, labels] - p_f[rows, labels])

    grads_pred, _ = mlp_backward(model.prediction, tape.pred_tape, d_pred)

    trunk_width = model.pi_trunk.out_dim
    d_trunk_out = np.zeros((b, trunk_width))
    grads_noise = Gradients.zeros_like(model.noise_head)
    if flags.use_noise_net:
        grads_noise, dh = mlp_backward(model.noise_head, tape.noise_tape, d_noise_out)
        d_trunk_out += dh

    grads_gate = Gradients.zeros_like(model.gate_head)
    grads_gate_trunk = (
        Gradients.zeros_like(model.gate_trunk) if model.gate_trunk is not None else None
    )
    if flags.use_gate:
        grads_gate, d_gate_in = mlp_backward(model.gate_head, tape.gate_tape, d_gate_out[:, None])
        if model.share_first_layer:
            d_trunk_out += d_gate_in
        else:
            grads_gate_trunk, _ = mlp_backward(model.gate_trunk, tape.gate_trunk_tape, d_gate_in)

    grads_trunk = Gradients.zeros_like(model.pi_trunk)
    if tape.trunk_tape is not None:
        grads_trunk, _ = mlp_backward(model.pi_trunk, tape.trunk_tape, d_trunk_out)

    return ModelGradients(grads_pred, grads_trunk, grads_noise, grads_gate, grads_gate_trunk)


def forward_infer(model: PiDualModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities from the prediction network alone (no PI)."""
    logits, _ = mlp_forward(model.prediction, np.asarray(x, dtype=np.float64))
    return softmax(logits)


def prediction_logits(model: PiDualModel, x: np.ndarray) -> np.ndarray:
    logits, _ = mlp_forward(model.prediction, np.asarray(x, dtype=np.float64))
    return logits


def noise_logits(model: PiDualModel, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Raw (un-gated) noise-network logits; zeros when that path is ablated."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if not model.flags.use_noise_net:
        return np.zeros((a.shape[0], model.num_classes))
    trunk_out, _ = mlp_forward(model.pi_trunk, _noise_input(model, x, a))
    out, _ = mlp_forward(model.noise_head, trunk_out)
    return out


def gate_values(model: PiDualModel, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Per-sample gate outputs in (0, 1)."""
    if not model.flags.use_gate:
        raise ContractError("this model variant has no gating network")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if model.share_first_layer:
        gate_in, _ = mlp_forward(model.pi_trunk, _noise_input(model, x, a))
    else:
        gate_in, _ = mlp_forward(model.gate_trunk, _noise_input(model, x, a))
    out, _ = mlp_forward(model.gate_head, gate_in)
    return out[:, 0]


# ---------------------------------------------------------------------------
# Checkpoints: one JSON document holding every tensor with its shape implied
# by nested lists, plus the ablation flags. Floats are written with repr so
# the round trip is lossless at 64-bit precision.
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "pidual-checkpoint-v1"


def _net_to_json(net: MlpParams | None) -> list[dict] | None:
    if net is None:
        return None
    return [
        {"weight": w.tolist(), "bias": b.tolist(), "activation": act}
        for w, b, act in zip(net.weights, net.biases, net.activations)
    ]


def _net_from_json(layers: list[dict] | None) -> MlpParams | None:
    if layers is None:
        return None
    return MlpParams(
        [np.asarray(l["weight"], dtype=np.float64) for l in layers],
        [np.asarray(l["bias"], dtype=np.float64) for l in layers],
        [l["activation"] for l in layers],
    )


def save_checkpoint(model: PiDualModel, path: str | Path) -> None:
    doc = {
        "format": _CHECKPOINT_FORMAT,
        "feature_dim": model.feature_dim,
        "pi_dim": model.pi_dim,
        "num_classes": model.num_classes,
        "share_first_layer": model.share_first_layer,
        "flags": {
            "use_gate": model.flags.use_gate,
            "use_noise_net": model.flags.use_noise_net,
            "gate_space": model.flags.gate_space,
            "noise_input": model.flags.noise_input,
        },
        "prediction": _net_to_json(model.prediction),
        "pi_trunk": _net_to_json(model.pi_trunk),
        "noise_head": _net_to_json(model.noise_head),
        "gate_head": _net_to_json(model.gate_head),
        "gate_trunk": _net_to_json(model.gate_trunk),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> PiDualModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != _CHECKPOINT_FORMAT:
        raise DataFormatError(f"{path}: not a {_CHECKPOINT_FORMAT} file")
    flags = AblationFlags(**doc["flags"])
    return PiDualModel(
        prediction=_net_from_json(doc["prediction"]),
        pi_trunk=_net_from_json(doc["pi_trunk"]),
        noise_head=_net_from_json(doc["noise_head"]),
        gate_head=_net_from_json(doc["gate_head"]),
        gate_trunk=_net_from_json(doc["gate_trunk"]),
        flags=flags,
        share_first_layer=doc["share_first_layer"],
        feature_dim=doc["feature_dim"],
        pi_dim=doc["pi_dim"],
        num_classes=doc["num_classes"],
    )
