"""Descriptor/label ingestion, normalization, splits, folds, and dataset views.

A dataset is a descriptor table joined to per-assay binary labels. Every
(compound, assay, label) triple is one training case; a compound screened in
k assays contributes k cases with the same descriptor row. All dataset values
are immutable after construction, so views can be shared freely across
concurrent training runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import (
    AssayTooSmall,
    DataError,
    DuplicateCompound,
    DuplicateLabel,
    EmptyInput,
    InsufficientRows,
    ParseError,
    UnknownAssay,
)


def _round_half_up(x: float) -> int:
    """round() with ties away from zero, so split sizes don't banker-round."""
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class DescriptorTable:
    """Compounds x descriptors matrix with row and column names."""

    compound_ids: tuple[str, ...]
    values: np.ndarray
    descriptor_names: tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DataError("descriptor values must be a 2-D matrix")
        if self.values.shape[0] != len(self.compound_ids):
            raise DataError("row count must equal compound id count")
        if self.values.shape[1] != len(self.descriptor_names):
            raise DataError("column count must equal descriptor name count")
        if len(set(self.compound_ids)) != len(self.compound_ids):
            raise DuplicateCompound("duplicate compound ids in table")
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise DataError("descriptor values must be finite")

    @property
    def n_compounds(self) -> int:
        return self.values.shape[0]

    @property
    def n_descriptors(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NormStats:
    """Per-column mean/stdev of the original table plus dropped column indices.

    means and stdevs cover every original column; dropped columns keep their
    mean and record a stdev of 0, which is what makes denormalization exact.
    """

    means: np.ndarray
    stdevs: np.ndarray
    dropped_columns: tuple[int, ...]

    @property
    def retained_columns(self) -> np.ndarray:
        mask = np.ones(len(self.means), dtype=bool)
        mask[list(self.dropped_columns)] = False
        return np.where(mask)[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "means": self.means.tolist(),
                "stdevs": self.stdevs.tolist(),
                "dropped": list(self.dropped_columns),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        obj = json.loads(text)
        return cls(
            means=np.asarray(obj["means"], dtype=np.float64),
            stdevs=np.asarray(obj["stdevs"], dtype=np.float64),
            dropped_columns=tuple(int(i) for i in obj["dropped"]),
        )


@dataclass(frozen=True)
class LabelSet:
    """Unique (compound_id, assay_id) -> binary activity records."""

    compound_ids: tuple[str, ...]
    assay_ids: tuple[str, ...]
    labels: np.ndarray

    def __post_init__(self):
        if not (len(self.compound_ids) == len(self.assay_ids) == len(self.labels)):
            raise DataError("label record fields must have equal length")
        pairs = set(zip(self.compound_ids, self.assay_ids))
        if len(pairs) != len(self.compound_ids):
            raise DuplicateLabel("duplicate (compound_id, assay_id) pair")
        if self.labels.size and not np.all(np.isin(self.labels, (0, 1))):
            raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class MultiTaskDataset:
    """Normalized descriptors joined to labeled cases for one or more assays.

    cases are three parallel arrays: row index into the descriptor table,
    assay index into assay_ids, and the binary label. fold_ids, when present,
    aligns with the cases and partitions them for cross-validation.
    """

    descriptors: DescriptorTable
    row_idx: np.ndarray
    assay_idx: np.ndarray
    labels: np.ndarray
    assay_ids: tuple[str, ...]
    provenance: str = "all"
    fold_ids: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.row_idx)
        if not (len(self.assay_idx) == len(self.labels) == n):
            raise DataError("case arrays must have equal length")
        if n:
            if self.assay_idx.min() < 0 or self.assay_idx.max() >= len(self.assay_ids):
                raise DataError("assay index out of range")
            if self.row_idx.min() < 0 or self.row_idx.max() >= self.descriptors.n_compounds:
                raise DataError("row index out of range")
        if self.fold_ids is not None and len(self.fold_ids) != n:
            raise DataError("fold_ids must align with cases")

    @property
    def n_cases(self) -> int:
        return len(self.row_idx)

    @property
    def n_assays(self) -> int:
        return len(self.assay_ids)

    @property
    def n_features(self) -> int:
        return self.descriptors.n_descriptors

    def assay_index(self, assay_id: str) -> int:
        try:
            return self.assay_ids.index(assay_id)
        except ValueError:
            raise UnknownAssay(f"assay {assay_id!r} not in dataset") from None

    def positions_of_assay(self, assay_id: str) -> np.ndarray:
        return np.where(self.assay_idx == self.assay_index(assay_id))[0]

    def case_features(self, positions: np.ndarray | None = None) -> np.ndarray:
        """Descriptor rows for the given case positions (all cases if None)."""
        rows = self.row_idx if positions is None else self.row_idx[positions]
        return self.descriptors.values[rows]

    def counts_by_assay(self) -> dict[str, int]:
        return {a: int(np.sum(self.assay_idx == j)) for j, a in enumerate(self.assay_ids)}

    def take(self, positions: np.ndarray, provenance: str | None = None) -> "MultiTaskDataset":
        """View containing the cases at the given positions (repeats allowed)."""
        return replace(
            self,
            row_idx=self.row_idx[positions],
            assay_idx=self.assay_idx[positions],
            labels=self.labels[positions],
            fold_ids=None if self.fold_ids is None else self.fold_ids[positions],
            provenance=self.provenance if provenance is None else provenance,
        )

    def with_fold_ids(self, fold_ids: np.ndarray) -> "MultiTaskDataset":
        return replace(self, fold_ids=np.asarray(fold_ids, dtype=np.int64))

    def with_descriptors(self, table: DescriptorTable) -> "MultiTaskDataset":
        if table.n_compounds != self.descriptors.n_compounds:
            raise DataError("replacement table must keep the compound rows")
        return replace(self, descriptors=table)


@dataclass(frozen=True)
class SplitAssignment:
    """Reproducible record of how training cases were folded."""

    test_fraction: float
    seed: int
    fold_count: int
    fold_ids: np.ndarray = field(repr=False)


def load_descriptor_table(path: str | Path) -> DescriptorTable:
    """Parse a headered descriptor CSV (first column: compound id).

    Raises DuplicateCompound, ParseError (with 1-based row/column), or
    EmptyInput per the file contract.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path} is empty") from None
        if len(header) < 2:
            raise EmptyInput(f"{path} has no descriptor columns")
        names = tuple(header[1:])
        ids: list[str] = []
        seen: set[str] = set()
        rows: list[list[float]] = []
        for r, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(r, len(record) + 1, "wrong field count")
            cid = record[0]
            if cid in seen:
                raise DuplicateCompound(f"compound id {cid!r} duplicated at row {r}")
            seen.add(cid)
            ids.append(cid)
            parsed = []
            for c, cell in enumerate(record[1:], start=2):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(r, c, f"not a number: {cell!r}") from None
                if not np.isfinite(value):
                    raise ParseError(r, c, f"non-finite value: {cell!r}")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise EmptyInput(f"{path} has a header but no data rows")
    return DescriptorTable(tuple(ids), np.asarray(rows, dtype=np.float64), names)


def load_labels(path: str | Path) -> LabelSet:
    """Parse a label CSV with header compound_id,assay_id,label."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path} is empty") from None
        if [h.strip() for h in header] != ["compound_id", "assay_id", "label"]:
            raise ParseError(1, 1, "expected header compound_id,assay_id,label")
        compounds: list[str] = []
        assays: list[str] = []
        labels: list[int] = []
        for r, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != 3:
                raise ParseError(r, len(record) + 1, "wrong field count")
            if record[2] not in ("0", "1"):
                raise ParseError(r, 3, f"label must be 0 or 1, got {record[2]!r}")
            compounds.append(record[0])
            assays.append(record[1])
            labels.append(int(record[2]))
    if not labels:
        raise EmptyInput(f"{path} has a header but no data rows")
    return LabelSet(tuple(compounds), tuple(assays), np.asarray(labels, dtype=np.int8))


def zscore_normalize(table: DescriptorTable) -> tuple[DescriptorTable, NormStats]:
    """Center and scale each column to mean 0, sample stdev 1 (ddof=1).

    Zero-variance columns are dropped from the returned table and recorded in
    the stats so the transform stays invertible.
    """
    if table.n_compounds < 2:
        raise InsufficientRows("normalization needs at least 2 rows")
    means = table.values.mean(axis=0)
    stdevs = table.values.std(axis=0, ddof=1)
    dropped = tuple(int(i) for i in np.where(stdevs == 0.0)[0])
    stats = NormStats(means=means, stdevs=stdevs, dropped_columns=dropped)
    kept = stats.retained_columns
    normalized = (table.values[:, kept] - means[kept]) / stdevs[kept]
    out = DescriptorTable(
        table.compound_ids,
        normalized,
        tuple(table.descriptor_names[i] for i in kept),
    )
    return out, stats


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert zscore_normalize, reinstating dropped constant columns."""
    n = values.shape[0]
    out = np.empty((n, len(stats.means)), dtype=np.float64)
    kept = stats.retained_columns
    out[:, kept] = values * stats.stdevs[kept] + stats.means[kept]
    if stats.dropped_columns:
        dropped = list(stats.dropped_columns)
        out[:, dropped] = stats.means[dropped]
    return out


def build_dataset(
    table: DescriptorTable, labels: LabelSet, provenance: str = "all"
) -> MultiTaskDataset:
    """Join labels to descriptor rows; assays are ordered by sorted id."""
    row_of = {cid: i for i, cid in enumerate(table.compound_ids)}
    assay_ids = tuple(sorted(set(labels.assay_ids)))
    assay_of = {a: j for j, a in enumerate(assay_ids)}
    row_idx = np.empty(len(labels), dtype=np.int64)
    assay_idx = np.empty(len(labels), dtype=np.int64)
    for i, (cid, aid) in enumerate(zip(labels.compound_ids, labels.assay_ids)):
        if cid not in row_of:
            raise DataError(f"label references unknown compound {cid!r}")
        row_idx[i] = row_of[cid]
        assay_idx[i] = assay_of[aid]
    return MultiTaskDataset(
        descriptors=table,
        row_idx=row_idx,
        assay_idx=assay_idx,
        labels=labels.labels.astype(np.int8),
        assay_ids=assay_ids,
        provenance=provenance,
    )


def split_train_test(
    dataset: MultiTaskDataset, test_fraction: float, seed: int
) -> tuple[MultiTaskDataset, MultiTaskDataset]:
    """Hold out round(test_fraction * n) cases per assay, at random.

    Deterministic given the seed; assays are processed in assay_ids order.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(dataset.n_cases, dtype=bool)
    for j, assay in enumerate(dataset.assay_ids):
        positions = np.where(dataset.assay_idx == j)[0]
        n = len(positions)
        if n < 4:
            raise AssayTooSmall(f"assay {assay!r} has {n} cases; need at least 4 to split")
        n_test = _round_half_up(test_fraction * n)
        perm = rng.permutation(n)
        test_mask[positions[perm[:n_test]]] = True
    train = dataset.take(np.where(~test_mask)[0], provenance="train")
    test = dataset.take(np.where(test_mask)[0], provenance="test")
    return train, test


def make_folds(train: MultiTaskDataset, k: int, seed: int) -> SplitAssignment:
    """Partition training cases into k near-equal folds within each assay."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    counts = train.counts_by_assay()
    smallest = min(counts, key=counts.get)
    if counts[smallest] < k:
        raise AssayTooSmall(
            f"assay {smallest!r} has {counts[smallest]} cases; cannot make {k} folds"
        )
    rng = np.random.default_rng(seed)
    fold_ids = np.empty(train.n_cases, dtype=np.int64)
    for j in range(train.n_assays):
        positions = np.where(train.assay_idx == j)[0]
        n = len(positions)
        perm = rng.permutation(n)
        base, rem = divmod(n, k)
        start = 0
        for f in range(k):
            size = base + (1 if f < rem else 0)
            fold_ids[positions[perm[start : start + size]]] = f
            start += size
    return SplitAssignment(test_fraction=np.nan, seed=seed, fold_count=k, fold_ids=fold_ids)


def select_assays(
    dataset: MultiTaskDataset, assay_ids: list[str] | tuple[str, ...]
) -> MultiTaskDataset:
    """View restricted to the given assays, re-indexed in the given order."""
    indices = [dataset.assay_index(a) for a in assay_ids]
    remap = {old: new for new, old in enumerate(indices)}
    keep = np.isin(dataset.assay_idx, indices)
    positions = np.where(keep)[0]
    new_assay_idx = np.array([remap[a] for a in dataset.assay_idx[positions]], dtype=np.int64)
    return replace(
        dataset.take(positions),
        assay_idx=new_assay_idx,
        assay_ids=tuple(assay_ids),
    )


def combine_assays(
    primary_assay: str, others: list[str], data: MultiTaskDataset
) -> MultiTaskDataset:
    """Single-task view of the primary assay augmented with related assays.

    On train-tagged data, the cases of primary and all others are pooled and
    relabeled to the primary task (compounds occurring in several merged
    assays keep one case per source assay, conflicting labels included). On
    test-tagged data the others are ignored: a test view only ever contains
    the primary assay's cases.
    """
    for a in [primary_assay, *others]:
        data.assay_index(a)
    if data.provenance.startswith("test"):
        merged = [primary_assay]
    else:
        merged = [primary_assay, *others]
    indices = [data.assay_index(a) for a in merged]
    positions = np.concatenate(
        [np.where(data.assay_idx == j)[0] for j in indices]
    ) if indices else np.empty(0, dtype=np.int64)
    view = data.take(positions)
    return replace(
        view,
        assay_idx=np.zeros(view.n_cases, dtype=np.int64),
        assay_ids=(primary_assay,),
    )


def bootstrap_resample(train: MultiTaskDataset, seed: int) -> MultiTaskDataset:
    """Resample the same number of cases per assay, uniformly with replacement."""
    if train.n_cases == 0:
        raise EmptyInput("cannot bootstrap an empty dataset")
    rng = np.random.default_rng(seed)
    chunks = []
    for j in range(train.n_assays):
        positions = np.where(train.assay_idx == j)[0]
        if len(positions):
            chunks.append(rng.choice(positions, size=len(positions), replace=True))
    return train.take(np.concatenate(chunks))


# ---------------------------------------------------------------------------
# Prepared-run persistence (the `prepare` command's on-disk layout)
# ---------------------------------------------------------------------------


def write_descriptor_table(table: DescriptorTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["compound_id", *table.descriptor_names])
        for cid, row in zip(table.compound_ids, table.values):
            writer.writerow([cid, *[repr(float(v)) for v in row]])


def save_prepared(
    out_dir: str | Path,
    table: DescriptorTable,
    stats: NormStats,
    train: MultiTaskDataset,
    test: MultiTaskDataset,
    assignment: SplitAssignment,
    test_fraction: float,
    seed: int,
) -> None:
    """Write the normalized table, norm stats, and the case/split/fold manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_descriptor_table(table, out / "descriptors.csv")
    (out / "norm_stats.json").write_text(stats.to_json(), encoding="utf-8")
    with (out / "cases.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["compound_id", "assay_id", "label", "split", "fold"])
        for pos in range(train.n_cases):
            writer.writerow(
                [
                    train.descriptors.compound_ids[train.row_idx[pos]],
                    train.assay_ids[train.assay_idx[pos]],
                    int(train.labels[pos]),
                    "train",
                    int(assignment.fold_ids[pos]),
                ]
            )
        for pos in range(test.n_cases):
            writer.writerow(
                [
                    test.descriptors.compound_ids[test.row_idx[pos]],
                    test.assay_ids[test.assay_idx[pos]],
                    int(test.labels[pos]),
                    "test",
                    "",
                ]
            )
    (out / "split.json").write_text(
        json.dumps(
            {
                "test_fraction": test_fraction,
                "seed": seed,
                "fold_count": assignment.fold_count,
            }
        ),
        encoding="utf-8",
    )


def load_prepared(
    run_dir: str | Path,
) -> tuple[MultiTaskDataset, MultiTaskDataset, NormStats, dict]:
    """Reload (train, test, stats, split metadata) from a prepared directory."""
    run = Path(run_dir)
    for name in ("descriptors.csv", "norm_stats.json", "cases.csv", "split.json"):
        if not (run / name).exists():
            raise DataError(f"prepared directory {run} is missing {name}")
    table = load_descriptor_table(run / "descriptors.csv")
    stats = NormStats.from_json((run / "norm_stats.json").read_text(encoding="utf-8"))
    meta = json.loads((run / "split.json").read_text(encoding="utf-8"))

    row_of = {cid: i for i, cid in enumerate(table.compound_ids)}
    records = {"train": [], "test": []}
    with (run / "cases.csv").open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for record in reader:
            cid, aid, label, split, fold = record
            records[split].append((cid, aid, int(label), fold))
    assay_ids = tuple(sorted({aid for recs in records.values() for _, aid, _, _ in recs}))
    assay_of = {a: j for j, a in enumerate(assay_ids)}

    def _dataset(recs, provenance, with_folds):
        row_idx = np.array([row_of[c] for c, _, _, _ in recs], dtype=np.int64)
        assay_idx = np.array([assay_of[a] for _, a, _, _ in recs], dtype=np.int64)
        labels = np.array([l for _, _, l, _ in recs], dtype=np.int8)
        ds = MultiTaskDataset(table, row_idx, assay_idx, labels, assay_ids, provenance)
        if with_folds:
            ds = ds.with_fold_ids(np.array([int(f) for _, _, _, f in recs], dtype=np.int64))
        return ds

    train = _dataset(records["train"], "train", with_folds=True)
    test = _dataset(records["test"], "test", with_folds=False)
    return train, test, stats, meta
