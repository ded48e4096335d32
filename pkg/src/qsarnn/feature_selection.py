"""Information-gain feature ranking and reduced-feature dataset views.

Gain for a continuous feature is computed decision-stump style: the best
single threshold, taken from the midpoints between consecutive distinct
sorted values, measured in bits. Per-feature scores are independent, so a
ranking may be computed concurrently over a read-only dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import DescriptorTable, MultiTaskDataset
from .exceptions import BadFeatureCount, ShapeError, UndefinedGain
from .validation import check_binary_labels, check_matrix, check_vector


@dataclass(frozen=True)
class FeatureRanking:
    """Descriptors of one assay ordered by non-increasing information gain."""

    assay_id: str
    entries: tuple[tuple[int, float], ...]

    def top(self, k: int) -> list[int]:
        return [idx for idx, _ in self.entries[:k]]


def binary_entropy(p: float) -> float:
    """Entropy in bits of a Bernoulli(p) variable."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p)))


def information_gain(feature, labels) -> float:
    """Best single-threshold information gain of a feature against binary labels.

    Thresholds are the midpoints between consecutive distinct sorted feature
    values; a constant feature admits no split and scores 0.
    """
    x = check_vector(feature, "feature")
    y = check_binary_labels(labels)
    if len(x) != len(y):
        raise ShapeError(f"feature and labels must match, got {len(x)} and {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    n_pos_total = int(y.sum())
    if n_pos_total == 0 or n_pos_total == len(y):
        raise UndefinedGain("labels contain a single class")

    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = len(xs)
    boundaries = np.where(xs[:-1] < xs[1:])[0]
    total_entropy = binary_entropy(n_pos_total / n)
    if len(boundaries) == 0:
        return 0.0

    pos_prefix = np.cumsum(ys)
    n_left = boundaries + 1
    pos_left = pos_prefix[boundaries]
    n_right = n - n_left
    pos_right = n_pos_total - pos_left

    def entropies(pos, count):
        p = pos / count
        out = np.zeros_like(p, dtype=np.float64)
        interior = (p > 0.0) & (p < 1.0)
        pi = p[interior]
        out[interior] = -(pi * np.log2(pi) + (1.0 - pi) * np.log2(1.0 - pi))
        return out

    weighted = (n_left * entropies(pos_left, n_left) + n_right * entropies(pos_right, n_right)) / n
    gain = total_entropy - float(weighted.min())
    return max(gain, 0.0)


def rank_features(data: MultiTaskDataset, assay_id: str) -> FeatureRanking:
    """Score every retained descriptor against one assay's labels.

    Expects a training dataset; ties are broken by ascending descriptor index.
    """
    positions = data.positions_of_assay(assay_id)
    X = data.case_features(positions)
    y = data.labels[positions]
    gains = np.array([information_gain(X[:, j], y) for j in range(X.shape[1])])
    order = np.lexsort((np.arange(len(gains)), -gains))
    entries = tuple((int(j), float(gains[j])) for j in order)
    return FeatureRanking(assay_id=assay_id, entries=entries)


def subset_features(
    data: MultiTaskDataset, ranking: FeatureRanking, k: int
) -> MultiTaskDataset:
    """Dataset view keeping only the top-k ranked descriptor columns.

    Column order within the view follows the original table so that
    k == descriptor count is an exact identity.
    """
    d = data.n_features
    if not (1 <= k <= d):
        raise BadFeatureCount(f"k must be in [1, {d}], got {k}")
    keep = sorted(ranking.top(k))
    table = data.descriptors
    reduced = DescriptorTable(
        table.compound_ids,
        table.values[:, keep],
        tuple(table.descriptor_names[i] for i in keep),
    )
    return data.with_descriptors(reduced)


def write_ranking(ranking: FeatureRanking, names: tuple[str, ...], path: str | Path) -> None:
    """Persist a ranking as CSV rank,descriptor_index,descriptor_name,gain."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "descriptor_index", "descriptor_name", "gain"])
        for rank, (idx, gain) in enumerate(ranking.entries):
            writer.writerow([rank, idx, names[idx], repr(float(gain))])


class InformationGainSelector(TransformerMixin, BaseEstimator):
    """Keep the k features with the highest information gain against y.

    Parameters
    ----------
    k : int
        Number of features to retain.
    """

    def __init__(self, k=10):
        self.k = k

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_binary_labels(y)
        if not (1 <= self.k <= X.shape[1]):
            raise BadFeatureCount(f"k must be in [1, {X.shape[1]}], got {self.k}")
        gains = np.array([information_gain(X[:, j], y) for j in range(X.shape[1])])
        order = np.lexsort((np.arange(len(gains)), -gains))
        self.gains_ = gains
        self.selected_ = np.sort(order[: self.k])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(
                f"X has {X.shape[1]} features, selector was fit on {self.n_features_in_}"
            )
        return X[:, self.selected_]

    def get_support(self) -> np.ndarray:
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.selected_] = True
        return mask
