"""sklearn-style estimator facade over the network and training core.

MultiTaskNeuralNetClassifier accepts a plain binary target vector (single
task) or a (n_samples, n_tasks) matrix with NaN marking unobserved entries
(multi-task); masked entries contribute no loss and no gradient. It follows
the sklearn parameter conventions, so it composes with Pipeline, clone, and
grid search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import DescriptorTable, MultiTaskDataset
from .exceptions import NumericalDivergence
from .network import NetworkConfig, predict as net_predict
from .training import TrainSpec, train
from .validation import check_matrix


def dataset_from_arrays(X: np.ndarray, y: np.ndarray, provenance: str = "train") -> MultiTaskDataset:
    """Build an in-memory dataset from a feature matrix and (masked) targets.

    y may be 1-D binary or 2-D with NaN for unobserved (row, task) entries.
    """
    X = check_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    observed = np.isfinite(y)
    values = y[observed]
    if not np.all(np.isin(values, (0.0, 1.0))):
        raise ValueError("observed targets must be 0 or 1")
    rows, tasks = np.where(observed)
    table = DescriptorTable(
        tuple(f"R{i}" for i in range(X.shape[0])),
        X,
        tuple(f"x{j}" for j in range(X.shape[1])),
    )
    return MultiTaskDataset(
        descriptors=table,
        row_idx=rows.astype(np.int64),
        assay_idx=tasks.astype(np.int64),
        labels=y[observed].astype(np.int8),
        assay_ids=tuple(f"task{j}" for j in range(y.shape[1])),
        provenance=provenance,
    )


class MultiTaskNeuralNetClassifier(BaseEstimator):
    """Feedforward net trained with momentum SGD, dropout, and task masking.

    Parameters mirror the training metaparameters: network shape and
    initialization, dropout per non-output layer, the optimizer schedule,
    and minibatch composition. `dropout` may be a single rate applied to
    the input and every hidden layer, or a sequence of 1 + n_hidden rates.
    `assay_quotas` maps task column index to its per-batch case quota.
    """

    def __init__(
        self,
        hidden_sizes=(128,),
        activation="sigmoid",
        dropout=0.0,
        init_scale=0.05,
        bottom_scale_log_multiplier=0.0,
        epochs=30,
        learning_rate=0.05,
        anneal_mode="exponential",
        anneal_delay_fraction=0.5,
        momentum=0.9,
        weight_cost=0.0,
        batch_size=128,
        assay_quotas=None,
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.activation = activation
        self.dropout = dropout
        self.init_scale = init_scale
        self.bottom_scale_log_multiplier = bottom_scale_log_multiplier
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.anneal_mode = anneal_mode
        self.anneal_delay_fraction = anneal_delay_fraction
        self.momentum = momentum
        self.weight_cost = weight_cost
        self.batch_size = batch_size
        self.assay_quotas = assay_quotas
        self.random_state = random_state

    def _dropout_rates(self):
        n = 1 + len(tuple(self.hidden_sizes))
        if np.isscalar(self.dropout):
            return (float(self.dropout),) * n
        return tuple(float(p) for p in self.dropout)

    def fit(self, X, y):
        data = dataset_from_arrays(X, y)
        self._single_task_input_ = np.asarray(y).ndim == 1
        config = NetworkConfig(
            input_dim=data.n_features,
            hidden_sizes=tuple(self.hidden_sizes),
            output_dim=data.n_assays,
            activation=self.activation,
            dropout_rates=self._dropout_rates(),
            init_scale=self.init_scale,
            bottom_scale_log_multiplier=self.bottom_scale_log_multiplier,
        )
        quotas = None
        if self.assay_quotas is not None:
            quotas = {f"task{j}": int(q) for j, q in self.assay_quotas.items()}
        spec = TrainSpec(
            epochs=self.epochs,
            initial_lr=self.learning_rate,
            anneal_mode=self.anneal_mode,
            anneal_delay_fraction=self.anneal_delay_fraction,
            momentum=self.momentum,
            weight_cost=self.weight_cost,
            batch_size=self.batch_size,
            assay_quotas=quotas,
            seed=self.random_state,
        )
        outcome = train(data, config, spec)
        if outcome.diverged:
            raise NumericalDivergence(
                f"training diverged at epoch {outcome.diverged_epoch}"
            )
        self.params_ = outcome.params
        self.loss_history_ = outcome.loss_history
        self.n_features_in_ = data.n_features
        self.n_tasks_ = data.n_assays
        self.classes_ = np.array([0, 1])
        return self

    def _activity_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_matrix(X)
        return net_predict(self.params_, X)

    def predict_proba(self, X):
        """(n, 2) class probabilities for a single task, else per-task
        activity probabilities of shape (n, n_tasks)."""
        probs = self._activity_proba(X)
        if self._single_task_input_:
            p = probs[:, 0]
            return np.column_stack([1.0 - p, p])
        return probs

    def predict(self, X):
        probs = self._activity_proba(X)
        labels = (probs >= 0.5).astype(np.int64)
        if self._single_task_input_:
            return labels[:, 0]
        return labels
