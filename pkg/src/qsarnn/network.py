"""Feedforward networks: forward pass with inverted dropout, masked losses,
and exact backpropagated gradients.

The network computes y_0 = x, z_l = W_l y_{l-1} + b_l, y_l = h_l(z_l).
Hidden layers share one activation (logistic sigmoid or rectifier); the
output layer is always a logistic sigmoid so outputs are per-task activity
probabilities. Training cases supervise only the output units their task
mask marks as observed: masked-out entries contribute exactly zero loss and
zero gradient.

Dropout is inverted: at train time each non-output layer's activations are
multiplied by Bernoulli(1-p)/(1-p), and inference applies no correction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .exceptions import NumericalDivergence, ShapeError, StaleTrace

PROB_EPS = 1e-12

ACTIVATIONS = ("sigmoid", "relu")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and initialization settings for one network."""

    input_dim: int
    hidden_sizes: tuple[int, ...]
    output_dim: int = 1
    activation: str = "sigmoid"
    dropout_rates: tuple[float, ...] | None = None
    init_scale: float = 0.05
    bottom_scale_log_multiplier: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.dropout_rates is None:
            object.__setattr__(self, "dropout_rates", (0.0,) * (1 + len(self.hidden_sizes)))
        else:
            object.__setattr__(
                self, "dropout_rates", tuple(float(p) for p in self.dropout_rates)
            )
        self.validate()

    def validate(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if len(self.hidden_sizes) > 3:
            raise ValueError("at most 3 hidden layers are supported")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.dropout_rates) != 1 + len(self.hidden_sizes):
            raise ValueError(
                "dropout_rates needs one entry for the input layer and each hidden layer"
            )
        if any(not (0.0 <= p <= 0.75) for p in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 0.75]")
        if not (0.01 <= self.init_scale <= 0.2):
            raise ValueError("init_scale must lie in [0.01, 0.2]")
        if not (-1.0 <= self.bottom_scale_log_multiplier <= 1.0):
            raise ValueError("bottom_scale_log_multiplier must lie in [-1, 1]")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) of each weight matrix, input to output."""
        sizes = [self.input_dim, *self.hidden_sizes, self.output_dim]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "dropout_rates": list(self.dropout_rates),
            "init_scale": self.init_scale,
            "bottom_scale_log_multiplier": self.bottom_scale_log_multiplier,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NetworkConfig":
        return cls(
            input_dim=int(obj["input_dim"]),
            hidden_sizes=tuple(obj["hidden_sizes"]),
            output_dim=int(obj["output_dim"]),
            activation=obj["activation"],
            dropout_rates=tuple(obj["dropout_rates"]),
            init_scale=float(obj["init_scale"]),
            bottom_scale_log_multiplier=float(obj["bottom_scale_log_multiplier"]),
        )


@dataclass
class NetworkParams:
    """Per-layer weight matrices (fan_out x fan_in) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "sigmoid"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def shape_key(self) -> tuple:
        return tuple(w.shape for w in self.weights)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class Gradients:
    """Same shapes as NetworkParams; the gradient of a masked loss."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward evaluation."""

    zs: list[np.ndarray]
    activations: list[np.ndarray]  # h(z) per layer, before dropout
    ys: list[np.ndarray]  # post-dropout activations, ys[0] is the (masked) input
    multipliers: list[np.ndarray] | None  # dropout multipliers, input + hidden
    outputs: np.ndarray = field(init=False)
    param_key: tuple = ()
    activation: str = "sigmoid"

    def __post_init__(self):
        self.outputs = self.ys[-1]


def init_network(config: NetworkConfig, seed: int) -> NetworkParams:
    """Gaussian-initialized weights, zero biases, deterministic per seed.

    All matrices use stdev init_scale except the bottom (input-to-first)
    matrix, whose stdev is multiplied by exp(bottom_scale_log_multiplier).
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (fan_out, fan_in) in enumerate(config.layer_dims):
        scale = config.init_scale
        if i == 0:
            scale *= float(np.exp(config.bottom_scale_log_multiplier))
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases, activation=config.activation)


def _hidden_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return expit(z)
    return np.maximum(z, 0.0)


def forward_masked(
    params: NetworkParams, inputs: np.ndarray, multipliers: list[np.ndarray] | None
) -> ForwardTrace:
    """Forward pass with explicit dropout multipliers (None for inference).

    multipliers, when given, holds one array per non-output layer (the input
    layer first, then each hidden layer), already scaled by 1/(1-p).
    """
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(
            f"inputs must be (n, {params.input_dim}), got {X.shape}"
        )
    L = params.n_layers
    if multipliers is not None and len(multipliers) != L:
        raise ShapeError(f"expected {L} dropout multipliers, got {len(multipliers)}")

    y = X if multipliers is None else X * multipliers[0]
    zs, activations, ys = [], [], [y]
    for l in range(L):
        with np.errstate(over="ignore", invalid="ignore"):
            z = y @ params.weights[l].T + params.biases[l]
        if not np.all(np.isfinite(z)):
            raise NumericalDivergence(f"layer {l + 1}")
        a = expit(z) if l == L - 1 else _hidden_activation(z, params.activation)
        zs.append(z)
        activations.append(a)
        if l < L - 1 and multipliers is not None:
            y = a * multipliers[l + 1]
        else:
            y = a
        ys.append(y)
    return ForwardTrace(
        zs=zs,
        activations=activations,
        ys=ys,
        multipliers=multipliers,
        param_key=params.shape_key(),
        activation=params.activation,
    )


def sample_dropout_multipliers(
    params: NetworkParams,
    n_cases: int,
    dropout_rates,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Inverted-dropout multipliers Bernoulli(1-p)/(1-p) for each non-output layer."""
    rates = tuple(dropout_rates)
    if len(rates) != params.n_layers:
        raise ShapeError(
            f"expected {params.n_layers} dropout rates (input + hidden), got {len(rates)}"
        )
    widths = [params.input_dim] + [w.shape[0] for w in params.weights[:-1]]
    multipliers = []
    for p, width in zip(rates, widths):
        keep = rng.random((n_cases, width)) >= p
        multipliers.append(keep / (1.0 - p))
    return multipliers


def forward(
    params: NetworkParams,
    inputs: np.ndarray,
    dropout_rates=None,
    rng: np.random.Generator | int | None = None,
) -> ForwardTrace:
    """Forward pass; train mode (dropout sampled) when an rng is given."""
    if rng is None:
        return forward_masked(params, inputs, None)
    rng = np.random.default_rng(rng)
    if dropout_rates is None:
        dropout_rates = (0.0,) * params.n_layers
    X = np.asarray(inputs, dtype=np.float64)
    multipliers = sample_dropout_multipliers(params, X.shape[0], dropout_rates, rng)
    return forward_masked(params, X, multipliers)


def _check_loss_shapes(outputs, targets, mask):
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != outputs.shape:
        raise ShapeError(f"targets shape {targets.shape} != outputs shape {outputs.shape}")
    if mask is None:
        mask = np.ones_like(outputs)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != outputs.shape:
            raise ShapeError(f"mask shape {mask.shape} != outputs shape {outputs.shape}")
    return outputs, targets, mask


def loss_cross_entropy(outputs, targets, mask=None) -> float:
    """Masked cross entropy in nats, outputs clamped to [eps, 1-eps]."""
    outputs, targets, mask = _check_loss_shapes(outputs, targets, mask)
    y = np.clip(outputs, PROB_EPS, 1.0 - PROB_EPS)
    terms = targets * np.log(y) + (1.0 - targets) * np.log(1.0 - y)
    return float(-np.sum(terms * mask))


def loss_mse(outputs, targets, mask=None) -> float:
    """Masked half sum of squared errors (the regression formulation hook)."""
    outputs, targets, mask = _check_loss_shapes(outputs, targets, mask)
    return float(0.5 * np.sum(((outputs - targets) ** 2) * mask))


def backward(
    params: NetworkParams, trace: ForwardTrace, targets, mask=None
) -> Gradients:
    """Exact gradient of the masked cross entropy for the traced forward pass.

    Dropout multipliers recorded in the trace are reused, so the gradient is
    that of the sampled subnetwork. Output-layer entries whose mask is 0
    contribute nothing to any gradient.
    """
    if trace.param_key != params.shape_key():
        raise StaleTrace("trace was produced by differently-shaped parameters")
    outputs, targets, mask = _check_loss_shapes(trace.outputs, targets, mask)

    L = params.n_layers
    grad_w = [None] * L
    grad_b = [None] * L

    delta = (outputs - targets) * mask  # dC/dz at the sigmoid+CE output layer
    grad_w[L - 1] = delta.T @ trace.ys[L - 1]
    grad_b[L - 1] = delta.sum(axis=0)
    for l in range(L - 1, 0, -1):
        upstream = delta @ params.weights[l]
        if trace.multipliers is not None:
            upstream = upstream * trace.multipliers[l]
        if params.activation == "sigmoid":
            a = trace.activations[l - 1]
            delta = upstream * a * (1.0 - a)
        else:
            delta = upstream * (trace.zs[l - 1] > 0)
        grad_w[l - 1] = delta.T @ trace.ys[l - 1]
        grad_b[l - 1] = delta.sum(axis=0)
    return Gradients(weights=grad_w, biases=grad_b)


def predict(params: NetworkParams, inputs) -> np.ndarray:
    """Per-task activity probabilities, strictly inside (0, 1)."""
    trace = forward_masked(params, np.asarray(inputs, dtype=np.float64), None)
    return np.clip(trace.outputs, PROB_EPS, 1.0 - PROB_EPS)


# ---------------------------------------------------------------------------
# Serialization: JSON header line + little-endian float64 payload
# ---------------------------------------------------------------------------


def save_model(
    path: str | Path,
    params: NetworkParams,
    config: NetworkConfig | None = None,
    seed: int | None = None,
    descriptor_names: tuple[str, ...] = (),
    norm_stats_ref: str | None = None,
) -> None:
    """Write a model file: one JSON header line, then weights and biases
    per layer (row-major little-endian float64)."""
    header = {
        "format": "qsarnn-model-v1",
        "config": None if config is None else config.to_dict(),
        "activation": params.activation,
        "seed": seed,
        "descriptor_names": list(descriptor_names),
        "norm_stats": norm_stats_ref,
        "layer_shapes": [list(w.shape) for w in params.weights],
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path: str | Path) -> tuple[NetworkParams, dict]:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        weights, biases = [], []
        for fan_out, fan_in in header["layer_shapes"]:
            w = np.frombuffer(fh.read(8 * fan_out * fan_in), dtype="<f8")
            weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            biases.append(b.astype(np.float64))
    params = NetworkParams(weights, biases, activation=header["activation"])
    return params, header
