"""Importance models, threshold rules, and feature projection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellsift.rankers import (
    SelectionMethod,
    SelectionRule,
    apply_selection,
    average_importance_across_classes,
    project_features,
    train_gradient_boosting,
    train_logreg,
    train_random_forest,
)
from cellsift.synthetic import generate_synthetic
from cellsift.tensors import Dataset, LabelVector, PooledFeatures


def _dataset(x, y):
    return Dataset(PooledFeatures(np.asarray(x, float)), LabelVector(np.asarray(y)))


def _single_feature_dataset(n=180, e=6, seed=0):
    """Labels fully determined by feature 0; everything else is noise."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, e))
    thirds = np.quantile(x[:, 0], [1 / 3, 2 / 3])
    y = np.digitize(x[:, 0], thirds)
    return _dataset(x, y)


class TestLogReg:
    def test_zero_column_stays_zero(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((60, 4))
        x[:, 2] = 0.0
        y = (x[:, 0] > 0).astype(int)
        model = train_logreg(_dataset(x, y), max_iter=200)
        assert np.array_equal(model.coef[:, 2], np.zeros(3))

    def test_separable_ordering(self):
        rng = np.random.default_rng(1)
        n = 90
        y = np.repeat([0, 1, 2], n // 3)
        x = (np.array([-2.0, 0.0, 2.0])[y] + 0.3 * rng.standard_normal(n))[:, None]
        model = train_logreg(_dataset(x, y))
        w = model.coef[:, 0]
        assert w[0] < w[1] < w[2]

    def test_duplicated_columns_equal_coefficients(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((80, 1))
        x = np.hstack([base, base, rng.standard_normal((80, 1))])
        y = (base[:, 0] > 0).astype(int) + (rng.random(80) < 0.1)
        y = np.clip(y, 0, 2)
        model = train_logreg(_dataset(x, y))
        assert np.abs(model.coef[:, 0] - model.coef[:, 1]).max() < 1e-8

    def test_single_class_rejected(self):
        x = np.random.default_rng(3).standard_normal((10, 2))
        with pytest.raises(ValueError, match="two classes"):
            train_logreg(_dataset(x, np.ones(10, dtype=int)))

    def test_fit_actually_classifies(self):
        data = generate_synthetic((60, 60, 60), 8, 2, seed=11)
        model = train_logreg(data)
        accuracy = (model.predict(data.features.data) == data.labels.labels).mean()
        assert accuracy > 0.95


class TestRandomForest:
    def test_single_informative_feature_dominates(self):
        # sqrt(E) feature subsampling hides the signal from some nodes, so
        # the noise share only vanishes with enough samples per tree
        data = _single_feature_dataset(n=600, e=4, seed=0)
        model = train_random_forest(data, trees=30, seed=5)
        assert model.importances[0] > 0.9
        assert abs(model.importances.sum() - 1.0) < 1e-12

    def test_pure_labels_all_leaves(self):
        x = np.random.default_rng(4).standard_normal((40, 3))
        model = train_random_forest(_dataset(x, np.zeros(40, dtype=int)),
                                    trees=10, seed=0)
        assert np.array_equal(model.importances, np.zeros(3))
        assert all(root.is_leaf for root in model.trees)

    def test_deterministic_per_seed(self):
        data = _single_feature_dataset(seed=6)
        a = train_random_forest(data, trees=15, seed=9)
        b = train_random_forest(data, trees=15, seed=9)
        assert np.array_equal(a.importances, b.importances)
        c = train_random_forest(data, trees=15, seed=10)
        assert not np.array_equal(a.importances, c.importances)

    def test_importances_non_negative(self):
        data = generate_synthetic((40, 40, 40), 10, 2, seed=3)
        model = train_random_forest(data, trees=20, seed=1)
        assert (model.importances >= 0).all()

    def test_empty_data_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_random_forest(_dataset(np.zeros((0, 3)), np.zeros(0, dtype=int)))


class TestGradientBoosting:
    def test_constant_feature_importance_exactly_zero(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((90, 4))
        x[:, 1] = 5.0  # constant: can never split
        y = (x[:, 0] > 0).astype(int)
        model = train_gradient_boosting(_dataset(x, y), rounds=20)
        assert model.importances[1] == 0.0
        ranking = apply_selection(
            model.importances, SelectionRule(SelectionMethod.BOOSTING)
        )
        assert not ranking.keep_mask[1]

    def test_zero_rounds_warns_and_selection_fails(self):
        data = _single_feature_dataset(seed=8)
        with pytest.warns(RuntimeWarning, match="no splits"):
            model = train_gradient_boosting(data, rounds=0)
        assert np.array_equal(model.importances, np.zeros(6))
        with pytest.raises(ValueError, match="filtered every feature"):
            apply_selection(model.importances, SelectionRule(SelectionMethod.BOOSTING))

    def test_single_informative_feature_dominates(self):
        model = train_gradient_boosting(_single_feature_dataset(seed=9), rounds=30)
        assert model.importances[0] > 0.9

    def test_boosting_learns(self):
        data = generate_synthetic((50, 50, 50), 6, 2, seed=12)
        model = train_gradient_boosting(data, rounds=40)
        accuracy = (model.predict(data.features.data) == data.labels.labels).mean()
        assert accuracy > 0.9

    def test_deterministic(self):
        data = _single_feature_dataset(seed=10)
        a = train_gradient_boosting(data, rounds=10)
        b = train_gradient_boosting(data, rounds=10)
        assert np.array_equal(a.importances, b.importances)


class TestAverageImportance:
    def test_signed_rows(self):
        scores = average_importance_across_classes(np.array([[1.0], [-1.0], [1.0]]))
        assert scores.tolist() == [1.0]

    def test_zeros(self):
        scores = average_importance_across_classes(np.zeros((3, 5)))
        assert np.array_equal(scores, np.zeros(5))

    def test_hand_arithmetic(self):
        scores = average_importance_across_classes(np.array([[3.0], [0.0], [0.0]]))
        assert scores.tolist() == [1.0]

    def test_shape_check(self):
        with pytest.raises(ValueError, match="3, E"):
            average_importance_across_classes(np.zeros((2, 4)))


class TestApplySelection:
    def test_boosting_rule(self):
        ranking = apply_selection(
            np.array([0.0, 0.5, 0.0, 0.2]), SelectionRule(SelectionMethod.BOOSTING)
        )
        assert ranking.keep_mask.tolist() == [False, True, False, True]
        assert ranking.filtered_fraction == 0.5

    def test_all_selection(self):
        ranking = apply_selection(
            np.array([0.0, 0.0, 1.0]), SelectionRule(SelectionMethod.ALL)
        )
        assert ranking.keep_mask.all()
        assert ranking.filtered_fraction == 0.0

    def test_forest_threshold(self):
        ranking = apply_selection(
            np.array([5e-7, 4e-6]), SelectionRule(SelectionMethod.FOREST)
        )
        assert ranking.keep_mask.tolist() == [False, True]

    def test_threshold_comparison_is_strict(self):
        rule = SelectionRule(SelectionMethod.FOREST, 3e-6)
        ranking = apply_selection(np.array([3e-6, 3.0000001e-6]), rule)
        assert ranking.keep_mask.tolist() == [False, True]

    def test_all_filtered_is_error(self):
        with pytest.raises(ValueError, match="filtered every feature"):
            apply_selection(np.array([0.0, 0.0]), SelectionRule(SelectionMethod.BOOSTING))

    def test_negative_scores_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            apply_selection(np.array([-0.1, 0.2]), SelectionRule(SelectionMethod.ALL))

    @settings(max_examples=100, deadline=None)
    @given(
        scores=st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=30),
        t1=st.floats(0, 0.5),
        t2=st.floats(0, 0.5),
    )
    def test_monotone_in_threshold(self, scores, t1, t2):
        lo, hi = sorted((t1, t2))
        scores = np.asarray(scores)
        mask_lo = scores > lo
        mask_hi = scores > hi
        if not (mask_lo.any() and mask_hi.any()):
            return
        kept_lo = apply_selection(scores, SelectionRule(SelectionMethod.FOREST, lo)).keep_mask
        kept_hi = apply_selection(scores, SelectionRule(SelectionMethod.FOREST, hi)).keep_mask
        assert not (kept_hi & ~kept_lo).any()  # raising threshold never adds


class TestProjectFeatures:
    def test_identity(self):
        x = PooledFeatures(np.arange(6, dtype=float).reshape(2, 3))
        out = project_features(x, np.array([True, True, True]))
        assert np.array_equal(out.data, x.data)

    def test_slicing(self):
        x = PooledFeatures(np.array([[1.0, 2.0, 3.0]]))
        out = project_features(x, np.array([True, False, True]))
        assert out.data.tolist() == [[1.0, 3.0]]

    def test_length_mismatch(self):
        x = PooledFeatures(np.zeros((2, 3)))
        with pytest.raises(ValueError, match="mask length"):
            project_features(x, np.array([True, False]))

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(0, 2**31),
        e=st.integers(2, 12),
    )
    def test_composition_equals_and_mask(self, seed, e):
        rng = np.random.default_rng(seed)
        x = PooledFeatures(rng.standard_normal((3, e)))
        m1 = rng.random(e) < 0.7
        if not m1.any():
            m1[0] = True
        m2 = rng.random(int(m1.sum())) < 0.7
        if not m2.any():
            m2[0] = True
        twice = project_features(project_features(x, m1), m2)
        combined = m1.copy()
        combined[np.flatnonzero(m1)] = m2
        once = project_features(x, combined)
        assert np.array_equal(twice.data, once.data)
