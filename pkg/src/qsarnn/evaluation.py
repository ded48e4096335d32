"""ROC AUC, the cross-fold train/evaluate protocol, and bootstrap significance.

AUC is the Mann-Whitney statistic computed by rank-sum with midrank tie
handling: the probability that a random active compound outscores a random
inactive one, with half credit for ties. Model comparison uses mean AUCs
from normal fold training on the left side and unbiased variances from
bootstrap-resampled training runs inside the threshold, with significance
declared when |y1 - y2| > 1.96 * sqrt((var1 + var2) / resamples).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import MultiTaskDataset, bootstrap_resample
from .exceptions import BadVariance, NoValidRuns, ShapeError, UndefinedAUC
from .network import NetworkConfig, predict
from .training import TrainSpec, train


@dataclass
class EvalReport:
    """Per-assay evaluation of one model family: fold AUCs and their mean."""

    assay_id: str
    model_label: str
    fold_aucs: list[float | None]
    mean_auc: float | None
    bootstrap_variance: float | None = None
    bootstrap_resamples: int | None = None
    seeds: list[int] | None = None
    config_hash: str = ""
    status: str = "ok"  # or "diverged"

    def to_json(self) -> str:
        return json.dumps(
            {
                "assay_id": self.assay_id,
                "model": self.model_label,
                "fold_aucs": self.fold_aucs,
                "mean_auc": self.mean_auc,
                "bootstrap_variance": self.bootstrap_variance,
                "bootstrap_resamples": self.bootstrap_resamples,
                "seeds": self.seeds,
                "config_hash": self.config_hash,
                "status": self.status,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        obj = json.loads(text)
        return cls(
            assay_id=obj["assay_id"],
            model_label=obj["model"],
            fold_aucs=obj["fold_aucs"],
            mean_auc=obj["mean_auc"],
            bootstrap_variance=obj.get("bootstrap_variance"),
            bootstrap_resamples=obj.get("bootstrap_resamples"),
            seeds=obj.get("seeds"),
            config_hash=obj.get("config_hash", ""),
            status=obj.get("status", "ok"),
        )


@dataclass(frozen=True)
class SignificanceResult:
    y1: float
    y2: float
    var1: float
    var2: float
    threshold: float
    significant: bool

    def verdict(self) -> str:
        relation = ">" if self.significant else "<="
        return (
            f"|{self.y1:.4f} - {self.y2:.4f}| = {abs(self.y1 - self.y2):.5f} "
            f"{relation} threshold {self.threshold:.5f} -> "
            f"{'significant' if self.significant else 'not significant'}"
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "y1": self.y1,
                "y2": self.y2,
                "var1": self.var1,
                "var2": self.var2,
                "threshold": self.threshold,
                "significant": self.significant,
            }
        )


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    n = len(x)
    order = np.argsort(x, kind="stable")
    sx = x[order]
    boundary = np.empty(n, dtype=bool)
    boundary[0] = True
    boundary[1:] = sx[1:] != sx[:-1]
    group = np.cumsum(boundary) - 1
    starts = np.where(boundary)[0]
    ends = np.append(starts[1:], n) - 1
    group_rank = (starts + ends) / 2.0 + 1.0
    ranks = np.empty(n)
    ranks[order] = group_rank[group]
    return ranks


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum form of Mann-Whitney."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) != len(labels):
        raise ShapeError(f"scores and labels must match, got {len(scores)} and {len(labels)}")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC("both classes must be present")
    ranks = _midranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def unbiased_variance(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise ValueError("variance needs at least 2 values")
    if np.all(values == values[0]):
        return 0.0  # identical values: exactly zero, no mean-roundoff residue
    return float(np.var(values, ddof=1))


def config_hash(net_config: NetworkConfig, spec: TrainSpec) -> str:
    payload = json.dumps(
        {"network": net_config.to_dict(), "training": spec.to_dict()}, sort_keys=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _fold_seed(base_seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([base_seed, fold]).generate_state(1)[0])


def _assay_aucs(dataset: MultiTaskDataset, probs: np.ndarray) -> dict[str, float]:
    out = {}
    for j, assay in enumerate(dataset.assay_ids):
        positions = np.where(dataset.assay_idx == j)[0]
        out[assay] = auc(probs[positions, j], dataset.labels[positions])
    return out


def cross_fold_evaluate(
    train_data: MultiTaskDataset,
    test_data: MultiTaskDataset | None,
    net_config: NetworkConfig,
    spec: TrainSpec,
    model_label: str = "NNET",
    scoring: str = "test",
    threads: int = 1,
    return_params: list | None = None,
) -> dict[str, EvalReport]:
    """Train once per fold on the other folds; score the held-out TEST set
    (scoring="test") or the held-out fold itself (scoring="validation").

    Test scoring is the reporting protocol; validation scoring is what a
    metaparameter search optimizes, and needs no test set at all. Returns
    one report per assay. A diverged fold marks every report diverged
    rather than being dropped. Fold models are appended to return_params
    when a list is supplied.
    """
    if train_data.fold_ids is None:
        raise ValueError("training data carries no fold assignment; run make_folds first")
    if scoring not in ("test", "validation"):
        raise ValueError(f"scoring must be 'test' or 'validation', got {scoring!r}")
    if scoring == "test" and test_data is None:
        raise ValueError("test scoring requires a test set")
    folds = sorted(set(train_data.fold_ids.tolist()))
    seeds = [_fold_seed(spec.seed, f) for f in folds]

    def run_fold(f_and_seed):
        f, seed_f = f_and_seed
        fit_view = train_data.take(np.where(train_data.fold_ids != f)[0])
        outcome = train(fit_view, net_config, replace(spec, seed=seed_f))
        if outcome.diverged:
            return None, outcome
        score_set = (
            test_data
            if scoring == "test"
            else train_data.take(np.where(train_data.fold_ids == f)[0], provenance="validation")
        )
        probs = predict(outcome.params, score_set.case_features())
        return _assay_aucs(score_set, probs), outcome

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_fold, zip(folds, seeds)))
    else:
        results = [run_fold(fs) for fs in zip(folds, seeds)]

    if return_params is not None:
        return_params.extend(outcome.params for _, outcome in results)

    chash = config_hash(net_config, spec)
    reports: dict[str, EvalReport] = {}
    diverged = any(aucs is None for aucs, _ in results)
    for assay in train_data.assay_ids:
        fold_aucs = [None if aucs is None else aucs[assay] for aucs, _ in results]
        if diverged:
            report = EvalReport(
                assay_id=assay,
                model_label=model_label,
                fold_aucs=fold_aucs,
                mean_auc=None,
                seeds=seeds,
                config_hash=chash,
                status="diverged",
            )
        else:
            report = EvalReport(
                assay_id=assay,
                model_label=model_label,
                fold_aucs=fold_aucs,
                mean_auc=float(np.mean([a for a in fold_aucs])),
                seeds=seeds,
                config_hash=chash,
            )
        reports[assay] = report
    return reports


def bootstrap_aucs(
    train_data: MultiTaskDataset,
    test_data: MultiTaskDataset,
    net_config: NetworkConfig,
    spec: TrainSpec,
    resamples: int = 8,
    seed: int | None = None,
    threads: int = 1,
) -> dict[str, list[float]]:
    """Test AUCs of models trained on `resamples` bootstrap resamples of the
    complete training set; diverged runs are omitted from the lists."""
    if resamples < 2:
        raise ValueError(f"resamples must be >= 2, got {resamples}")
    base = spec.seed if seed is None else seed
    run_seeds = [int(np.random.SeedSequence([base, 1000 + r]).generate_state(1)[0])
                 for r in range(resamples)]

    def run_one(seed_r):
        resampled = bootstrap_resample(train_data, seed=seed_r)
        outcome = train(resampled, net_config, replace(spec, seed=seed_r))
        if outcome.diverged:
            return None
        probs = predict(outcome.params, test_data.case_features())
        return _assay_aucs(test_data, probs)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, run_seeds))
    else:
        results = [run_one(s) for s in run_seeds]

    out: dict[str, list[float]] = {a: [] for a in train_data.assay_ids}
    for result in results:
        if result is None:
            continue
        for assay, value in result.items():
            out[assay].append(value)
    return out


def bootstrap_variance(
    train_data: MultiTaskDataset,
    test_data: MultiTaskDataset,
    net_config: NetworkConfig,
    spec: TrainSpec,
    resamples: int = 8,
    seed: int | None = None,
    threads: int = 1,
) -> dict[str, float]:
    """Unbiased sample variance of test AUC over bootstrap training runs."""
    aucs = bootstrap_aucs(train_data, test_data, net_config, spec, resamples, seed, threads)
    out = {}
    for assay, values in aucs.items():
        if len(values) < 2:
            raise NoValidRuns(
                f"assay {assay!r}: {len(values)} of {resamples} bootstrap runs completed"
            )
        out[assay] = unbiased_variance(values)
    return out


def significance_test(
    y1: float, y2: float, var1: float, var2: float, resamples: int = 8
) -> SignificanceResult:
    """The bootstrap t-style test: significant iff
    |y1 - y2| > 1.96 * sqrt((var1 + var2) / resamples)."""
    if var1 < 0 or var2 < 0:
        raise BadVariance(f"variances must be non-negative, got {var1} and {var2}")
    threshold = 1.96 * float(np.sqrt((var1 + var2) / resamples))
    return SignificanceResult(
        y1=float(y1),
        y2=float(y2),
        var1=float(var1),
        var2=float(var2),
        threshold=threshold,
        significant=bool(abs(y1 - y2) > threshold),
    )
