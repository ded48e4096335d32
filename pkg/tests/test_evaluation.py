import numpy as np
import pytest

from qsarnn.data import make_folds, split_train_test
from qsarnn.evaluation import (
    EvalReport,
    SignificanceResult,
    auc,
    bootstrap_aucs,
    bootstrap_variance,
    config_hash,
    cross_fold_evaluate,
    significance_test,
    unbiased_variance,
)
from qsarnn.exceptions import BadVariance, NoValidRuns, ShapeError, UndefinedAUC
from qsarnn.network import NetworkConfig
from qsarnn.training import TrainSpec

from test_training import pair_counting_auc, separable_dataset


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_reversed_ranking(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(10, 2001))
            if trial % 3 == 0:
                # heavy ties: few distinct score values
                scores = rng.choice([0.1, 0.5, 0.9], size=n)
            else:
                scores = rng.random(n)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert auc(scores, labels) == pytest.approx(
                pair_counting_auc(scores, labels), abs=1e-12
            )

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.random(100)
        labels = rng.integers(0, 2, size=100)
        labels[0], labels[1] = 0, 1
        base = auc(scores, labels)
        assert auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert auc(scores * 100 - 3, labels) == pytest.approx(base, abs=1e-12)

    def test_negation_complement_no_ties(self):
        rng = np.random.default_rng(2)
        scores = rng.permutation(50).astype(float)  # distinct scores
        labels = rng.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        assert auc(scores, labels) + auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)

    def test_label_flip_complement_no_ties(self):
        rng = np.random.default_rng(3)
        scores = rng.permutation(60).astype(float)
        labels = rng.integers(0, 2, size=60)
        labels[0], labels[1] = 0, 1
        assert auc(scores, labels) == pytest.approx(1.0 - auc(scores, 1 - labels), abs=1e-12)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedAUC):
            auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            auc([0.1, 0.2], [1])


class TestUnbiasedVariance:
    def test_hand_example(self):
        # {0.8, 0.9}: mean 0.85, unbiased variance 0.005
        assert unbiased_variance([0.8, 0.9]) == pytest.approx(0.005, abs=1e-15)

    def test_identical_values(self):
        assert unbiased_variance([0.7, 0.7, 0.7]) == 0.0

    def test_needs_two(self):
        with pytest.raises(ValueError):
            unbiased_variance([0.5])


def _prepared(seed=0, n=160):
    data = separable_dataset(n=n, seed=seed)
    train_set, test_set = split_train_test(data, 0.25, seed=seed)
    assignment = make_folds(train_set, 4, seed=seed)
    return train_set.with_fold_ids(assignment.fold_ids), test_set


def _config():
    return NetworkConfig(input_dim=2, hidden_sizes=(8,), output_dim=1,
                         activation="sigmoid", init_scale=0.2)


def _spec(**kwargs):
    defaults = dict(epochs=20, initial_lr=0.1, anneal_mode="exponential",
                    anneal_delay_fraction=0.5, momentum=0.5, weight_cost=0.0,
                    batch_size=32, seed=11)
    defaults.update(kwargs)
    return TrainSpec(**defaults)


class TestCrossFoldEvaluate:
    def test_four_fold_aucs_and_mean(self):
        train_set, test_set = _prepared()
        reports = cross_fold_evaluate(train_set, test_set, _config(), _spec())
        report = reports["A0"]
        assert len(report.fold_aucs) == 4
        assert report.mean_auc == pytest.approx(np.mean(report.fold_aucs))
        assert report.status == "ok"
        assert report.mean_auc > 0.95  # separable data
        assert len(report.seeds) == 4

    def test_deterministic(self):
        train_set, test_set = _prepared(seed=1)
        r1 = cross_fold_evaluate(train_set, test_set, _config(), _spec())
        r2 = cross_fold_evaluate(train_set, test_set, _config(), _spec())
        assert r1["A0"].fold_aucs == r2["A0"].fold_aucs

    def test_validation_scoring_needs_no_test_set(self):
        train_set, _ = _prepared(seed=2)
        reports = cross_fold_evaluate(
            train_set, None, _config(), _spec(), scoring="validation"
        )
        assert len(reports["A0"].fold_aucs) == 4
        assert reports["A0"].mean_auc > 0.9

    def test_diverged_marks_report(self):
        train_set, test_set = _prepared(seed=3)
        config = NetworkConfig(input_dim=2, hidden_sizes=(8,), output_dim=1,
                               activation="relu", init_scale=0.2)
        reports = cross_fold_evaluate(train_set, test_set, config, _spec(initial_lr=1e6))
        assert reports["A0"].status == "diverged"
        assert reports["A0"].mean_auc is None

    def test_missing_folds_rejected(self):
        train_set, test_set = _prepared(seed=4)
        bare = train_set.take(np.arange(train_set.n_cases))  # take keeps folds
        object.__setattr__(bare, "fold_ids", None)
        with pytest.raises(ValueError):
            cross_fold_evaluate(bare, test_set, _config(), _spec())

    def test_threaded_matches_sequential(self):
        train_set, test_set = _prepared(seed=5)
        r1 = cross_fold_evaluate(train_set, test_set, _config(), _spec())
        r2 = cross_fold_evaluate(train_set, test_set, _config(), _spec(), threads=4)
        assert r1["A0"].fold_aucs == r2["A0"].fold_aucs

    def test_report_json_round_trip(self):
        train_set, test_set = _prepared(seed=6)
        report = cross_fold_evaluate(train_set, test_set, _config(), _spec())["A0"]
        again = EvalReport.from_json(report.to_json())
        assert again == report


class TestBootstrapVariance:
    def test_deterministic_and_nonnegative(self):
        train_set, test_set = _prepared(seed=7)
        v1 = bootstrap_variance(train_set, test_set, _config(), _spec(epochs=8), resamples=4)
        v2 = bootstrap_variance(train_set, test_set, _config(), _spec(epochs=8), resamples=4)
        assert v1 == v2
        assert v1["A0"] >= 0.0

    def test_resample_count_respected(self):
        train_set, test_set = _prepared(seed=8)
        aucs = bootstrap_aucs(train_set, test_set, _config(), _spec(epochs=5), resamples=3)
        assert len(aucs["A0"]) == 3

    def test_all_diverged_raises(self):
        train_set, test_set = _prepared(seed=9)
        config = NetworkConfig(input_dim=2, hidden_sizes=(8,), output_dim=1,
                               activation="relu", init_scale=0.2)
        with pytest.raises(NoValidRuns):
            bootstrap_variance(
                train_set, test_set, config, _spec(initial_lr=1e6, epochs=30), resamples=2
            )

    def test_minimum_resamples(self):
        train_set, test_set = _prepared(seed=10)
        with pytest.raises(ValueError):
            bootstrap_variance(train_set, test_set, _config(), _spec(), resamples=1)


class TestSignificance:
    def test_worked_example(self):
        result = significance_test(0.70, 0.60, 0.004, 0.004)
        assert result.threshold == pytest.approx(1.96 * np.sqrt(0.008 / 8), abs=1e-12)
        assert result.threshold == pytest.approx(0.06198, abs=1e-5)
        assert result.significant

    def test_zero_variance(self):
        assert significance_test(0.70, 0.60, 0.0, 0.0).significant
        assert not significance_test(0.70, 0.70, 0.0, 0.0).significant

    def test_equal_means_never_significant(self):
        for var in (0.0, 0.001, 0.1):
            assert not significance_test(0.8, 0.8, var, var).significant

    def test_symmetric(self):
        a = significance_test(0.70, 0.60, 0.004, 0.002)
        b = significance_test(0.60, 0.70, 0.002, 0.004)
        assert a.significant == b.significant
        assert a.threshold == b.threshold

    def test_negative_variance(self):
        with pytest.raises(BadVariance):
            significance_test(0.7, 0.6, -0.001, 0.004)

    def test_verdict_and_json(self):
        result = significance_test(0.70, 0.60, 0.004, 0.004)
        assert "significant" in result.verdict()
        import json

        obj = json.loads(result.to_json())
        assert obj["significant"] is True


class TestConfigHash:
    def test_stable_and_sensitive(self):
        h1 = config_hash(_config(), _spec())
        h2 = config_hash(_config(), _spec())
        h3 = config_hash(_config(), _spec(epochs=21))
        assert h1 == h2
        assert h1 != h3
        assert len(h1) == 16
