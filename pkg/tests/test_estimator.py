import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from qsarnn.estimator import MultiTaskNeuralNetClassifier, dataset_from_arrays
from qsarnn.exceptions import NumericalDivergence
from qsarnn.feature_selection import InformationGainSelector

from test_training import pair_counting_auc


def separable_xy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    return X, y


def small_clf(**kwargs):
    defaults = dict(
        hidden_sizes=(8,), epochs=25, learning_rate=0.1, momentum=0.5,
        batch_size=32, anneal_delay_fraction=0.5, random_state=0, init_scale=0.2,
    )
    defaults.update(kwargs)
    return MultiTaskNeuralNetClassifier(**defaults)


class TestDatasetFromArrays:
    def test_single_task(self):
        X, y = separable_xy(50)
        data = dataset_from_arrays(X, y)
        assert data.n_cases == 50
        assert data.assay_ids == ("task0",)

    def test_multi_task_nan_mask(self):
        X, _ = separable_xy(10)
        y = np.full((10, 2), np.nan)
        y[:5, 0] = 1
        y[5:, 1] = 0
        data = dataset_from_arrays(X, y)
        assert data.n_cases == 10
        assert data.counts_by_assay() == {"task0": 5, "task1": 5}

    def test_bad_targets(self):
        X, _ = separable_xy(10)
        with pytest.raises(ValueError):
            dataset_from_arrays(X, np.full(10, 2.0))


class TestEstimatorBasics:
    def test_fit_predict_single_task(self):
        X, y = separable_xy()
        clf = small_clf().fit(X, y)
        proba = clf.predict_proba(X)
        assert proba.shape == (len(X), 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        assert pair_counting_auc(proba[:, 1], y) > 0.95
        preds = clf.predict(X)
        assert set(np.unique(preds)) <= {0, 1}
        assert (preds == y).mean() > 0.9

    def test_multi_task_shapes(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(120, 3))
        y = np.full((120, 2), np.nan)
        y[:80, 0] = (X[:80, 0] > 0).astype(float)
        y[40:, 1] = (X[40:, 1] > 0).astype(float)
        clf = small_clf(batch_size=32).fit(X, y)
        proba = clf.predict_proba(X)
        assert proba.shape == (120, 2)
        assert clf.predict(X).shape == (120, 2)
        assert clf.n_tasks_ == 2

    def test_not_fitted(self):
        X, _ = separable_xy(10)
        with pytest.raises(NotFittedError):
            small_clf().predict(X)

    def test_deterministic(self):
        X, y = separable_xy(seed=2)
        p1 = small_clf().fit(X, y).predict_proba(X)
        p2 = small_clf().fit(X, y).predict_proba(X)
        np.testing.assert_array_equal(p1, p2)

    def test_divergence_raises(self):
        X, y = separable_xy(seed=3)
        clf = small_clf(activation="relu", learning_rate=1e6)
        with pytest.raises(NumericalDivergence):
            clf.fit(X, y)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        clf = small_clf(momentum=0.7)
        params = clf.get_params()
        assert params["momentum"] == 0.7
        clf.set_params(momentum=0.2)
        assert clf.momentum == 0.2

    def test_clone(self):
        clf = small_clf(hidden_sizes=(16,), weight_cost=0.001)
        copy = clone(clf)
        assert copy.get_params() == clf.get_params()

    def test_pipeline_with_selector(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(200, 10))
        y = (X[:, 4] > 0).astype(int)
        pipe = Pipeline(
            [
                ("select", InformationGainSelector(k=2)),
                ("net", small_clf()),
            ]
        )
        pipe.fit(X, y)
        proba = pipe.predict_proba(X)
        assert pair_counting_auc(proba[:, 1], y) > 0.9
