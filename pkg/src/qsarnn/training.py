"""Minibatch SGD with momentum and L2 weight cost, learning-rate annealing,
per-assay quota minibatch composition, and divergence detection.

The update rule, applied uniformly to weights and biases, is

    v(t) = momentum * v(t-1) + lr * (-g - weight_cost * w)
    w(t) = w(t-1) + v(t)

with g the minibatch-average gradient. One epoch is ceil(N / batch_size)
composed minibatches over N training cases; in multi-task mode each batch
draws exactly its per-assay quota of cases, uniformly with replacement.
Divergence is an outcome, not an exception, so a hyperparameter search can
treat it as a constraint violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import MultiTaskDataset
from .exceptions import BadEpoch, EmptyAssay, NumericalDivergence, UnknownAssay
from .network import (
    Gradients,
    NetworkConfig,
    NetworkParams,
    backward,
    forward,
    init_network,
    loss_cross_entropy,
)

LINEAR_FINAL_LR = 1e-8
EXPONENTIAL_FINAL_LR = 1e-6
DIVERGENCE_LOSS_FACTOR = 10.0


@dataclass(frozen=True)
class TrainSpec:
    """All metaparameters of one training run.

    Construction does not range-check so that out-of-range settings (for
    example a deliberately divergent learning rate) can still be run;
    validate() enforces the searchable ranges and is what config loading
    calls.
    """

    epochs: int = 30
    initial_lr: float = 0.05
    anneal_mode: str = "exponential"
    anneal_delay_fraction: float = 0.5
    momentum: float = 0.9
    weight_cost: float = 0.0
    batch_size: int = 128
    assay_quotas: dict[str, int] | None = None
    seed: int = 0

    def validate(self, multi_task: bool = False):
        if not (2 <= self.epochs <= 120):
            raise ValueError(f"epochs must lie in [2, 120], got {self.epochs}")
        if not (0.001 <= self.initial_lr <= 0.3):
            raise ValueError(f"initial_lr must lie in [0.001, 0.3], got {self.initial_lr}")
        if self.anneal_mode not in ("linear", "exponential"):
            raise ValueError(f"anneal_mode must be linear or exponential, got {self.anneal_mode!r}")
        if not (0.0 <= self.anneal_delay_fraction <= 1.0):
            raise ValueError("anneal_delay_fraction must lie in [0, 1]")
        if not (0.0 <= self.momentum <= 0.95):
            raise ValueError(f"momentum must lie in [0, 0.95], got {self.momentum}")
        if not (0.0 <= self.weight_cost <= 0.007):
            raise ValueError(f"weight_cost must lie in [0, 0.007], got {self.weight_cost}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.assay_quotas is not None:
            if any(q < 0 for q in self.assay_quotas.values()):
                raise ValueError("assay quotas must be non-negative")
            total = sum(self.assay_quotas.values())
            if multi_task and total != self.batch_size:
                raise ValueError(
                    f"assay quotas sum to {total}, expected batch_size {self.batch_size}"
                )

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "initial_lr": self.initial_lr,
            "anneal_mode": self.anneal_mode,
            "anneal_delay_fraction": self.anneal_delay_fraction,
            "momentum": self.momentum,
            "weight_cost": self.weight_cost,
            "batch_size": self.batch_size,
            "assay_quotas": self.assay_quotas,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainSpec":
        quotas = obj.get("assay_quotas")
        return cls(
            epochs=int(obj["epochs"]),
            initial_lr=float(obj["initial_lr"]),
            anneal_mode=obj["anneal_mode"],
            anneal_delay_fraction=float(obj["anneal_delay_fraction"]),
            momentum=float(obj["momentum"]),
            weight_cost=float(obj["weight_cost"]),
            batch_size=int(obj["batch_size"]),
            assay_quotas=None if quotas is None else {k: int(v) for k, v in quotas.items()},
            seed=int(obj.get("seed", 0)),
        )


@dataclass
class OptimizerState:
    """Velocities mirroring the parameter shapes, plus schedule position."""

    velocities: Gradients
    epoch: int = 0
    lr: float = 0.0


@dataclass
class TrainOutcome:
    params: NetworkParams
    loss_history: list[float]
    status: str = "completed"  # or "diverged"
    diverged_epoch: int | None = None

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"


def zero_velocities(params: NetworkParams) -> Gradients:
    return Gradients(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )


def momentum_update(
    params: NetworkParams,
    velocities: Gradients,
    avg_gradient: Gradients,
    lr: float,
    momentum: float,
    weight_cost: float,
) -> tuple[NetworkParams, Gradients]:
    """One application of the momentum/weight-cost update to every parameter."""
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for w, v, g in zip(params.weights, velocities.weights, avg_gradient.weights):
        v2 = momentum * v + lr * (-g - weight_cost * w)
        new = w + v2
        vel_w.append(v2)
        new_w.append(new)
    for b, v, g in zip(params.biases, velocities.biases, avg_gradient.biases):
        v2 = momentum * v + lr * (-g - weight_cost * b)
        new = b + v2
        vel_b.append(v2)
        new_b.append(new)
    for arr in new_w + new_b:
        if not np.all(np.isfinite(arr)):
            raise NumericalDivergence("parameter update")
    return (
        NetworkParams(new_w, new_b, activation=params.activation),
        Gradients(weights=vel_w, biases=vel_b),
    )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def lr_at_epoch(spec: TrainSpec, epoch: int) -> float:
    """Learning rate for an epoch under the spec's annealing schedule.

    Constant at initial_lr until the delay epoch; then a straight line down
    to 1e-8 (linear) or a constant shrink factor per epoch reaching 1e-6
    (exponential) at the final epoch.
    """
    if not (0 <= epoch < spec.epochs):
        raise BadEpoch(f"epoch {epoch} outside [0, {spec.epochs})")
    final = LINEAR_FINAL_LR if spec.anneal_mode == "linear" else EXPONENTIAL_FINAL_LR
    last = spec.epochs - 1
    start = min(_round_half_up(spec.anneal_delay_fraction * spec.epochs), last)
    if epoch < start:
        return spec.initial_lr
    if start == last:
        # annealing window collapsed to the final epoch
        return final
    if spec.anneal_mode == "linear":
        value = final + (spec.initial_lr - final) * (last - epoch) / (last - start)
        return min(spec.initial_lr, value)
    shrink = (final / spec.initial_lr) ** (1.0 / (last - start))
    return spec.initial_lr * shrink ** (epoch - start)


def default_quotas(assay_ids, batch_size: int) -> dict[str, int]:
    """Equal shares of the batch per assay; the remainder goes to the first."""
    n = len(assay_ids)
    base, rem = divmod(batch_size, n)
    quotas = {a: base for a in assay_ids}
    quotas[assay_ids[0]] += rem
    return quotas


def compose_minibatch(
    data: MultiTaskDataset,
    quotas: dict[str, int],
    rng: np.random.Generator,
    assay_positions: dict[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw exactly quota[a] cases from each assay, uniformly with replacement.

    Returns case positions and the batch's task-mask matrix (one 1 per case,
    at its assay's output unit). Assays are drawn in dataset order.
    """
    if assay_positions is None:
        assay_positions = {a: data.positions_of_assay(a) for a in data.assay_ids}
    chunks = []
    for assay in data.assay_ids:
        q = int(quotas.get(assay, 0))
        if q == 0:
            continue
        positions = assay_positions[assay]
        if len(positions) == 0:
            raise EmptyAssay(f"assay {assay!r} has no cases but quota {q}")
        draws = rng.integers(0, len(positions), size=q)
        chunks.append(positions[draws])
    for assay in quotas:
        if assay not in data.assay_ids:
            raise UnknownAssay(f"quota references unknown assay {assay!r}")
    batch = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    masks = np.zeros((len(batch), data.n_assays))
    masks[np.arange(len(batch)), data.assay_idx[batch]] = 1.0
    return batch, masks


def detect_divergence(loss_history: list[float], params: NetworkParams) -> bool:
    """True iff loss or parameters went non-finite, or epoch-mean loss
    exceeds 10x the first epoch's."""
    if any(not math.isfinite(v) for v in loss_history):
        return True
    for arr in params.weights + params.biases:
        if not np.all(np.isfinite(arr)):
            return True
    if loss_history and loss_history[-1] > DIVERGENCE_LOSS_FACTOR * loss_history[0]:
        return True
    return False


def train(
    data: MultiTaskDataset,
    net_config: NetworkConfig,
    spec: TrainSpec,
    init_seed: int | None = None,
    on_epoch: Callable[[str], None] | None = None,
) -> TrainOutcome:
    """Run the full training loop; deterministic given (init seed, spec seed).

    When init_seed is None, the network initialization stream is derived
    from spec.seed. on_epoch, if given, receives one CSV progress line
    `epoch,lr,mean_train_loss` per epoch.
    """
    if data.n_cases == 0:
        raise ValueError("cannot train on an empty dataset")
    if net_config.output_dim != data.n_assays:
        raise ValueError(
            f"network has {net_config.output_dim} outputs but dataset has {data.n_assays} assays"
        )
    seq = np.random.SeedSequence(spec.seed)
    batch_ss, dropout_ss, init_ss = seq.spawn(3)
    params = init_network(net_config, init_seed if init_seed is not None else init_ss)
    velocities = zero_velocities(params)
    batch_rng = np.random.default_rng(batch_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    quotas = spec.assay_quotas
    if quotas is None:
        quotas = default_quotas(data.assay_ids, spec.batch_size)
    assay_positions = {a: data.positions_of_assay(a) for a in data.assay_ids}
    for assay, q in quotas.items():
        if assay not in data.assay_ids:
            raise UnknownAssay(f"quota references unknown assay {assay!r}")
        if q > 0 and len(assay_positions[assay]) == 0:
            raise EmptyAssay(f"assay {assay!r} has no cases but quota {q}")

    steps_per_epoch = max(1, math.ceil(data.n_cases / spec.batch_size))
    history: list[float] = []
    for epoch in range(spec.epochs):
        lr = lr_at_epoch(spec, epoch)
        loss_sum = 0.0
        cases_seen = 0
        try:
            for _ in range(steps_per_epoch):
                positions, masks = compose_minibatch(data, quotas, batch_rng, assay_positions)
                X = data.case_features(positions)
                targets = np.zeros((len(positions), data.n_assays))
                targets[np.arange(len(positions)), data.assay_idx[positions]] = data.labels[
                    positions
                ]
                trace = forward(params, X, net_config.dropout_rates, rng=dropout_rng)
                loss_sum += loss_cross_entropy(trace.outputs, targets, masks)
                cases_seen += len(positions)
                grads = backward(params, trace, targets, masks)
                avg = Gradients(
                    weights=[g / len(positions) for g in grads.weights],
                    biases=[g / len(positions) for g in grads.biases],
                )
                params, velocities = momentum_update(
                    params, velocities, avg, lr, spec.momentum, spec.weight_cost
                )
        except NumericalDivergence:
            history.append(float("inf"))
            return TrainOutcome(params, history, status="diverged", diverged_epoch=epoch)
        mean_loss = loss_sum / cases_seen
        history.append(mean_loss)
        if on_epoch is not None:
            on_epoch(f"{epoch},{lr!r},{mean_loss!r}")
        if detect_divergence(history, params):
            return TrainOutcome(params, history, status="diverged", diverged_epoch=epoch)
    return TrainOutcome(params, history, status="completed")
