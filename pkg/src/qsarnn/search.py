"""Metaparameter search space and sequential optimization of validation AUC.

The space covers every searchable training metaparameter with its widest
published range; per-run overrides can narrow any dimension. Two strategies
drive the sequential budget: plain uniform random search, and expected
improvement under a Gaussian process surrogate (constant mean, squared
exponential kernel with per-dimension lengthscales fit by marginal
likelihood ascent). Diverged training runs are constraint violations: they
carry no objective value, and the acquisition is weighted by the probability
of a successful run estimated from the diverged/ok history.

The search loop never sees test data: trials are scored by validation-fold
AUC only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import norm

from .data import MultiTaskDataset
from .evaluation import cross_fold_evaluate
from .exceptions import GPError, NoValidRuns
from .network import NetworkConfig
from .training import TrainSpec, default_quotas

NOISE_STD_FLOOR = 1e-6
GP_MIN_OK_TRIALS = 5
ACQUISITION_CANDIDATES = 2048


# ---------------------------------------------------------------------------
# Search space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousDim:
    name: str
    low: float
    high: float


@dataclass(frozen=True)
class IntegerDim:
    name: str
    low: int
    high: int


@dataclass(frozen=True)
class CategoricalDim:
    name: str
    options: tuple


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        for d in self.dimensions:
            if isinstance(d, (ContinuousDim, IntegerDim)) and not d.low < d.high:
                raise ValueError(f"dimension {d.name}: low must be < high")
            if isinstance(d, CategoricalDim) and len(d.options) < 1:
                raise ValueError(f"dimension {d.name}: needs at least one option")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    def sample(self, rng: np.random.Generator) -> dict:
        point = {}
        for d in self.dimensions:
            if isinstance(d, ContinuousDim):
                point[d.name] = float(rng.uniform(d.low, d.high))
            elif isinstance(d, IntegerDim):
                point[d.name] = int(rng.integers(d.low, d.high + 1))
            else:
                point[d.name] = d.options[int(rng.integers(0, len(d.options)))]
        return point

    def contains(self, point: dict) -> bool:
        for d in self.dimensions:
            v = point.get(d.name)
            if isinstance(d, ContinuousDim) and not (d.low <= v <= d.high):
                return False
            if isinstance(d, IntegerDim) and not (
                d.low <= v <= d.high and float(v).is_integer()
            ):
                return False
            if isinstance(d, CategoricalDim) and v not in d.options:
                return False
        return True

    def encode(self, points: list[dict]) -> np.ndarray:
        """Map points to [0,1]-scaled vectors; categoricals become one-hot."""
        columns = []
        for d in self.dimensions:
            if isinstance(d, CategoricalDim):
                for opt in d.options:
                    columns.append([1.0 if p[d.name] == opt else 0.0 for p in points])
            else:
                span = d.high - d.low
                columns.append([(p[d.name] - d.low) / span for p in points])
        return np.array(columns, dtype=np.float64).T


def default_space(depth: int, multi_task: bool) -> SearchSpace:
    """The searchable metaparameter space for a given depth and task mode.

    Ranges are the widest used anywhere: hidden layers hold 16..3072 units
    single-task; multi-task layers hold 512..3584, capped at 2048 when three
    hidden layers are used. Epoch budgets are 2..100 for one hidden layer
    and 2..120 for deeper nets.
    """
    if not (1 <= depth <= 3):
        raise ValueError(f"depth must be 1, 2, or 3, got {depth}")
    dims: list = [ContinuousDim("dropout_input", 0.0, 0.75)]
    dims += [ContinuousDim(f"dropout_hidden{i}", 0.0, 0.75) for i in range(1, depth + 1)]
    dims.append(IntegerDim("epochs", 2, 100 if depth == 1 else 120))
    if multi_task:
        unit_max = 2048 if depth == 3 else 3584
        unit_min = 512
    else:
        unit_max = 3072
        unit_min = 16
    dims += [IntegerDim(f"hidden{i}", unit_min, unit_max) for i in range(1, depth + 1)]
    dims += [
        ContinuousDim("anneal_delay_fraction", 0.0, 1.0),
        ContinuousDim("initial_lr", 0.001, 0.3),
        CategoricalDim("anneal_mode", ("exponential", "linear")),
        ContinuousDim("momentum", 0.0, 0.95),
        ContinuousDim("weight_cost", 0.0, 0.007),
        CategoricalDim("activation", ("sigmoid", "relu")),
        ContinuousDim("init_scale", 0.01, 0.2),
        ContinuousDim("bottom_scale_log_multiplier", -1.0, 1.0),
    ]
    return SearchSpace(tuple(dims))


def apply_overrides(space: SearchSpace, overrides: dict) -> SearchSpace:
    """Narrow dimensions from a {name: {"min","max"} | {"options"}} mapping."""
    by_name = {d.name: d for d in space.dimensions}
    for name, spec in overrides.items():
        if name not in by_name:
            raise ValueError(f"unknown search dimension {name!r}")
        d = by_name[name]
        if "options" in spec:
            by_name[name] = CategoricalDim(name, tuple(spec["options"]))
        elif isinstance(d, IntegerDim):
            by_name[name] = IntegerDim(name, int(spec["min"]), int(spec["max"]))
        else:
            by_name[name] = ContinuousDim(name, float(spec["min"]), float(spec["max"]))
    return SearchSpace(tuple(by_name[d.name] for d in space.dimensions))


@dataclass
class TrialRecord:
    point: dict
    val_auc: float | None
    status: str  # "ok" or "diverged"


def sample_uniform(space: SearchSpace, seed) -> dict:
    """One independent uniform draw per dimension; deterministic per seed."""
    return space.sample(np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# Gaussian process surrogate
# ---------------------------------------------------------------------------


def _sqexp(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray, signal_var: float):
    diff = (A[:, None, :] - B[None, :, :]) / lengthscales
    return signal_var * np.exp(-0.5 * np.sum(diff * diff, axis=2))


def _chol_with_jitter(K: np.ndarray):
    """Cholesky, escalating jitter 1e-8 -> 1e-4 on singularity; GPError past that."""
    for jitter in (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4):
        try:
            return cho_factor(K + jitter * np.eye(len(K)), lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    raise GPError("kernel matrix singular even at jitter 1e-4")


@dataclass
class GaussianProcess:
    """Constant-mean GP with a squared-exponential ARD kernel."""

    X: np.ndarray
    y: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise_std: float
    mean: float
    _factor: tuple = None
    _alpha: np.ndarray = None

    def __post_init__(self):
        K = _sqexp(self.X, self.X, self.lengthscales, self.signal_var)
        K[np.diag_indices_from(K)] += self.noise_std**2
        self._factor, _ = _chol_with_jitter(K)
        self._alpha = cho_solve(self._factor, self.y - self.mean)

    def predict(self, Xstar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and (noise-free) variance of the latent function."""
        Ks = _sqexp(Xstar, self.X, self.lengthscales, self.signal_var)
        mean = self.mean + Ks @ self._alpha
        v = cho_solve(self._factor, Ks.T)
        var = self.signal_var - np.sum(Ks * v.T, axis=1)
        return mean, np.maximum(var, 0.0)


def _negative_log_marginal(log_params, X, y, mean):
    d = X.shape[1]
    lengthscales = np.exp(log_params[:d])
    signal_var = np.exp(2.0 * log_params[d])
    noise_var = np.exp(2.0 * log_params[d + 1])
    K = _sqexp(X, X, lengthscales, signal_var)
    K[np.diag_indices_from(K)] += noise_var
    try:
        factor = cho_factor(K + 1e-10 * np.eye(len(K)), lower=True)
    except np.linalg.LinAlgError:
        return 1e12
    resid = y - mean
    alpha = cho_solve(factor, resid)
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(0.5 * resid @ alpha + 0.5 * log_det + 0.5 * len(y) * np.log(2 * np.pi))


def fit_gp(X: np.ndarray, y: np.ndarray, noise_floor: float = NOISE_STD_FLOOR) -> GaussianProcess:
    """Fit kernel hyperparameters by L-BFGS-B ascent of the marginal likelihood.

    The observation noise standard deviation is bounded below by noise_floor.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mean = float(y.mean())
    d = X.shape[1]
    spread = max(float(y.std()), 1e-3)
    start = np.concatenate([np.full(d, np.log(0.5)), [np.log(spread)], [np.log(1e-3)]])
    bounds = (
        [(np.log(1e-2), np.log(1e2))] * d
        + [(np.log(1e-3), np.log(1e1))]
        + [(np.log(noise_floor), np.log(1.0))]
    )
    result = minimize(
        _negative_log_marginal,
        start,
        args=(X, y, mean),
        method="L-BFGS-B",
        bounds=bounds,
    )
    params = result.x
    return GaussianProcess(
        X=X,
        y=y,
        lengthscales=np.exp(params[:d]),
        signal_var=float(np.exp(2.0 * params[d])),
        noise_std=float(np.exp(params[d + 1])),
        mean=mean,
    )


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float) -> np.ndarray:
    """EI for maximization; zero wherever the posterior is certain."""
    ei = np.zeros_like(mean)
    positive = std > 0
    z = (mean[positive] - best) / std[positive]
    ei[positive] = (mean[positive] - best) * norm.cdf(z) + std[positive] * norm.pdf(z)
    return np.maximum(ei, 0.0)


def gp_suggest(history: list[TrialRecord], space: SearchSpace, seed) -> dict:
    """Next point to try: EI under the surrogate, weighted by the modeled
    probability of a non-diverged run; uniform until 5 ok-trials exist."""
    ok = [t for t in history if t.status == "ok"]
    if len(ok) < GP_MIN_OK_TRIALS:
        return sample_uniform(space, seed)
    rng = np.random.default_rng(seed)
    X_ok = space.encode([t.point for t in ok])
    y_ok = np.array([t.val_auc for t in ok])
    surrogate = fit_gp(X_ok, y_ok)

    candidates = [space.sample(rng) for _ in range(ACQUISITION_CANDIDATES)]
    C = space.encode(candidates)
    mean, var = surrogate.predict(C)
    acquisition = expected_improvement(mean, np.sqrt(var), float(y_ok.max()))

    if any(t.status == "diverged" for t in history):
        X_all = space.encode([t.point for t in history])
        y_success = np.array([1.0 if t.status == "ok" else 0.0 for t in history])
        success_model = fit_gp(X_all, y_success)
        p_ok, _ = success_model.predict(C)
        acquisition = acquisition * np.clip(p_ok, 0.01, 1.0)

    return candidates[int(np.argmax(acquisition))]


# ---------------------------------------------------------------------------
# Sequential search driver
# ---------------------------------------------------------------------------


def _trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def optimize(
    objective,
    space: SearchSpace,
    budget: int = 30,
    strategy: str = "gp",
    seed: int = 0,
) -> tuple[TrialRecord, list[TrialRecord]]:
    """Sequential suggest/evaluate loop over a black-box objective.

    objective(point) returns a float to maximize, or None for a diverged
    (constraint-violating) evaluation. Returns the best ok trial and the
    full history; raises NoValidRuns if every trial diverged.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if strategy not in ("random", "gp"):
        raise ValueError(f"strategy must be 'random' or 'gp', got {strategy!r}")
    history: list[TrialRecord] = []
    for trial in range(budget):
        t_seed = _trial_seed(seed, trial)
        if strategy == "random":
            point = sample_uniform(space, t_seed)
        else:
            point = gp_suggest(history, space, t_seed)
        value = objective(point)
        if value is None:
            history.append(TrialRecord(point=point, val_auc=None, status="diverged"))
        else:
            history.append(TrialRecord(point=point, val_auc=float(value), status="ok"))
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise NoValidRuns(f"all {budget} trials diverged")
    best = max(ok, key=lambda t: t.val_auc)
    return best, history


def point_to_configs(
    point: dict,
    input_dim: int,
    n_assays: int,
    depth: int,
    batch_size: int,
    assay_quotas: dict[str, int] | None,
    seed: int,
) -> tuple[NetworkConfig, TrainSpec]:
    """Materialize a search point as a (NetworkConfig, TrainSpec) pair."""
    hidden = tuple(int(point[f"hidden{i}"]) for i in range(1, depth + 1))
    dropout = (
        float(point["dropout_input"]),
        *(float(point[f"dropout_hidden{i}"]) for i in range(1, depth + 1)),
    )
    config = NetworkConfig(
        input_dim=input_dim,
        hidden_sizes=hidden,
        output_dim=n_assays,
        activation=point["activation"],
        dropout_rates=dropout,
        init_scale=float(point["init_scale"]),
        bottom_scale_log_multiplier=float(point["bottom_scale_log_multiplier"]),
    )
    spec = TrainSpec(
        epochs=int(point["epochs"]),
        initial_lr=float(point["initial_lr"]),
        anneal_mode=point["anneal_mode"],
        anneal_delay_fraction=float(point["anneal_delay_fraction"]),
        momentum=float(point["momentum"]),
        weight_cost=float(point["weight_cost"]),
        batch_size=batch_size,
        assay_quotas=assay_quotas,
        seed=seed,
    )
    return config, spec


def run_search(
    train_data: MultiTaskDataset,
    depth: int,
    multi_task: bool,
    budget: int = 30,
    strategy: str = "gp",
    seed: int = 0,
    batch_size: int = 128,
    target_assay: str | None = None,
    space: SearchSpace | None = None,
    threads: int = 1,
) -> tuple[TrialRecord, list[TrialRecord]]:
    """Search metaparameters by 4-fold validation AUC on the training set.

    The objective for each trial trains one model per fold on the other
    folds and averages the held-out folds' AUCs (mean over assays unless
    target_assay picks one). Test data never enters this function.
    """
    if train_data.fold_ids is None:
        raise ValueError("training data carries no fold assignment; run make_folds first")
    if multi_task != (train_data.n_assays > 1):
        raise ValueError("multi_task flag does not match the dataset's assay count")
    if space is None:
        space = default_space(depth, multi_task)
    quotas = default_quotas(train_data.assay_ids, batch_size) if multi_task else None

    def objective(point):
        config, spec = point_to_configs(
            point, train_data.n_features, train_data.n_assays, depth, batch_size,
            quotas, seed,
        )
        reports = cross_fold_evaluate(
            train_data, None, config, spec, scoring="validation", threads=threads
        )
        if any(r.status == "diverged" for r in reports.values()):
            return None
        if target_assay is not None:
            return reports[target_assay].mean_auc
        return float(np.mean([r.mean_auc for r in reports.values()]))

    return optimize(objective, space, budget=budget, strategy=strategy, seed=seed)


def write_trials(path: str | Path, space: SearchSpace, records: list[TrialRecord]) -> None:
    """Persist a trial log as CSV trial,status,val_auc,<one column per dimension>."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "status", "val_auc", *space.names])
        for i, record in enumerate(records):
            auc = "" if record.val_auc is None else repr(float(record.val_auc))
            writer.writerow(
                [i, record.status, auc, *[record.point[n] for n in space.names]]
            )
