import csv

import numpy as np
import pytest

from qsarnn.data import DescriptorTable, LabelSet, build_dataset


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def make_table(n_compounds=20, n_descriptors=5, seed=0):
    rng = np.random.default_rng(seed)
    ids = tuple(f"C{i}" for i in range(n_compounds))
    names = tuple(f"d{j}" for j in range(n_descriptors))
    return DescriptorTable(ids, rng.normal(size=(n_compounds, n_descriptors)), names)


def make_dataset(n_per_assay=(30, 30), n_descriptors=5, seed=0, provenance="train"):
    """Small synthetic dataset; every compound contributes one case per assay."""
    rng = np.random.default_rng(seed)
    n = max(n_per_assay)
    table = make_table(n, n_descriptors, seed)
    compounds, assays, labels = [], [], []
    for a, count in enumerate(n_per_assay):
        for i in range(count):
            compounds.append(f"C{i}")
            assays.append(f"A{a}")
            labels.append(int(rng.integers(0, 2)))
    label_set = LabelSet(tuple(compounds), tuple(assays), np.asarray(labels, dtype=np.int8))
    return build_dataset(table, label_set, provenance=provenance)


@pytest.fixture
def tmp_csv(tmp_path):
    def _write(name, rows):
        path = tmp_path / name
        write_csv(path, rows)
        return path

    return _write
