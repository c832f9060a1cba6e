import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cityboost.counterfeat import (
    KNN_UNIFORM,
    SOFTMAX_INVERSE_DISTANCE,
    CounterMatrix,
    FeatureConfig,
    build_weight_matrix,
    explained_variance,
    fit_pca,
    project_pca,
    spatial_context,
    window_features,
    window_matrices,
)
from cityboost.errors import (
    DegenerateVariance,
    DimensionMismatch,
    InvalidK,
    SchemaError,
    TooFewCounters,
)

from conftest import make_graph
from oracles import jacobi_eigh


def counter_matrix(values, observed=None):
    values = np.asarray(values, dtype=np.float64)
    k, t = values.shape
    slots = np.column_stack([np.zeros(t, dtype=int), np.arange(t)])
    return CounterMatrix(values=values, counter_ids=np.arange(k), slot_index=slots, observed=observed)


class TestWindowFeatures:
    def test_plain_window(self):
        assert window_features([5, 0, 3, 2, 7], t=4, window=4) == (7.0, 12.0)

    def test_truncated_window(self):
        assert window_features([4], t=0, window=4) == (4.0, 4.0)

    def test_missing_entries(self):
        nan = float("nan")
        assert window_features([5, nan, 3, nan], t=3, window=4) == (3.0, 8.0)
        assert window_features([5, None, 3, None], t=3, window=4) == (3.0, 8.0)

    def test_nothing_observed(self):
        assert window_features([None, None], t=1, window=2) == (0.0, 0.0)

    @given(
        data=st.lists(
            st.one_of(st.none(), st.floats(0, 1e6, allow_nan=False)), min_size=2, max_size=40
        ),
        window=st.integers(1, 8),
    )
    @settings(max_examples=60, deadline=None)
    def test_matrix_matches_scalar(self, data, window):
        values = np.array([0.0 if v is None else v for v in data])[None, :]
        observed = np.array([v is not None for v in data])[None, :]
        cm = counter_matrix(values, observed)
        last, wsum = window_matrices(cm, window)
        for t in range(len(data)):
            exp_last, exp_sum = window_features(data, t, window)
            assert last[0, t] == pytest.approx(exp_last)
            assert wsum[0, t] == pytest.approx(exp_sum)


class TestFitPCA:
    def test_rank_one_hand_example(self):
        # Second row is twice the first: covariance [[1,2],[2,4]], spectrum (5, 0).
        cm = counter_matrix([[1, 2, 3], [2, 4, 6]])
        model = fit_pca(cm, c=2)
        np.testing.assert_allclose(model.eigenvalues, [5.0, 0.0], atol=1e-12)
        assert explained_variance(model, 1) == pytest.approx(1.0)
        np.testing.assert_allclose(
            model.components[:, 0], np.array([1.0, 2.0]) / math.sqrt(5.0), atol=1e-12
        )

    def test_constant_matrix_degenerate(self):
        with pytest.raises(DegenerateVariance):
            fit_pca(counter_matrix([[3, 3, 3], [5, 5, 5]]), c=1)

    def test_component_count_bounds(self):
        cm = counter_matrix([[1, 2, 3], [2, 1, 3]])
        with pytest.raises(DimensionMismatch):
            fit_pca(cm, c=0)
        with pytest.raises(DimensionMismatch):
            fit_pca(cm, c=3)

    def test_matches_jacobi_oracle_on_seeded_matrices(self, rng):
        for _ in range(10):
            k, t = int(rng.integers(2, 8)), int(rng.integers(5, 30))
            values = rng.uniform(0, 100, size=(k, t))
            cm = counter_matrix(values)
            model = fit_pca(cm, c=k)

            centered = values - values.mean(axis=1, keepdims=True)
            cov = centered @ centered.T / (t - 1)
            oracle_vals, oracle_vecs = jacobi_eigh(cov)
            np.testing.assert_allclose(model.eigenvalues, np.maximum(oracle_vals, 0), atol=1e-8)
            # Orthonormality and the eigen-residual, which are basis-independent.
            np.testing.assert_allclose(
                model.components.T @ model.components, np.eye(k), atol=1e-8
            )
            residual = cov @ model.components - model.components * model.eigenvalues
            assert np.abs(residual).max() < 1e-8
            assert model.total_variance == pytest.approx(np.trace(cov), rel=1e-12)
            # Largest-magnitude entry of every component is positive.
            for j in range(k):
                pivot = np.argmax(np.abs(model.components[:, j]))
                assert model.components[pivot, j] > 0


class TestProjection:
    @pytest.fixture()
    def model(self, rng):
        return fit_pca(counter_matrix(rng.uniform(0, 50, size=(6, 40))), c=4)

    def test_mean_projects_to_zero(self, model):
        np.testing.assert_allclose(project_pca(model, model.mean), np.zeros(4), atol=1e-12)

    def test_component_projects_to_unit_axis(self, model):
        scores = project_pca(model, model.mean + model.components[:, 0])
        expected = np.zeros(4)
        expected[0] = 1.0
        np.testing.assert_allclose(scores, expected, atol=1e-10)

    def test_residual_orthogonal_to_components(self, model, rng):
        snapshot = rng.uniform(0, 50, size=6)
        scores = project_pca(model, snapshot)
        residual = snapshot - (model.mean + model.components @ scores)
        np.testing.assert_allclose(model.components.T @ residual, np.zeros(4), atol=1e-8)

    def test_dimension_mismatch(self, model):
        with pytest.raises(DimensionMismatch):
            project_pca(model, np.zeros(5))

    def test_explained_variance_monotone_and_complete(self, rng):
        values = rng.uniform(0, 10, size=(5, 25))
        model = fit_pca(counter_matrix(values), c=5)
        ratios = [explained_variance(model, m) for m in range(1, 6)]
        assert all(b >= a for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] == pytest.approx(1.0, abs=1e-9)
        with pytest.raises(DimensionMismatch):
            explained_variance(model, 6)


def layout_graph(points):
    return make_graph(
        nodes=[(0, 0.0, 0.0)],
        counters=[(i, float(x), float(y)) for i, (x, y) in enumerate(points)],
    )


class TestWeightMatrix:
    def test_two_counters_both_methods(self):
        g = layout_graph([(0.0, 0.0), (1.0, 0.0)])
        for method in (SOFTMAX_INVERSE_DISTANCE, KNN_UNIFORM):
            B = build_weight_matrix(g, method, knn_k=1)
            np.testing.assert_allclose(B.weights, [[0, 1], [1, 0]], atol=1e-15)

    def test_softmax_inverse_distance_arithmetic(self):
        g = layout_graph([(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)])
        B = build_weight_matrix(g, SOFTMAX_INVERSE_DISTANCE)
        e1, e13 = math.exp(1.0), math.exp(1.0 / 3.0)
        np.testing.assert_allclose(
            B.weights[0], [0.0, e1 / (e1 + e13), e13 / (e1 + e13)], rtol=1e-12
        )
        assert B.weights[0, 1] == pytest.approx(0.6608, abs=5e-5)

    def test_knn_single_neighbor(self):
        g = layout_graph([(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)])
        B = build_weight_matrix(g, KNN_UNIFORM, knn_k=1)
        np.testing.assert_allclose(B.weights, [[0, 1, 0], [1, 0, 0], [0, 1, 0]], atol=1e-15)

    def test_knn_distance_tie_prefers_lower_id(self):
        g = layout_graph([(0.0, 0.0), (-2.0, 0.0), (2.0, 0.0)])
        B = build_weight_matrix(g, KNN_UNIFORM, knn_k=1)
        assert B.weights[0, 1] == 1.0

    def test_errors(self):
        g1 = layout_graph([(0.0, 0.0)])
        with pytest.raises(TooFewCounters):
            build_weight_matrix(g1, SOFTMAX_INVERSE_DISTANCE)
        g3 = layout_graph([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])
        with pytest.raises(InvalidK):
            build_weight_matrix(g3, KNN_UNIFORM, knn_k=3)

    def test_random_layouts_row_stochastic(self, rng):
        for _ in range(25):
            k = int(rng.integers(2, 12))
            g = layout_graph(rng.uniform(0, 10, size=(k, 2)))
            for method in (SOFTMAX_INVERSE_DISTANCE, KNN_UNIFORM):
                knn_k = int(rng.integers(1, k))
                B = build_weight_matrix(g, method, knn_k=knn_k)
                np.testing.assert_allclose(B.weights.sum(axis=1), np.ones(k), atol=1e-9)
                assert np.all(np.diag(B.weights) == 0)
                if method == KNN_UNIFORM:
                    assert np.all((B.weights > 0).sum(axis=1) == knn_k)

    def test_coincident_counters_do_not_overflow(self):
        g = layout_graph([(0.0, 0.0), (0.0, 0.0), (5.0, 5.0)])
        B = build_weight_matrix(g, SOFTMAX_INVERSE_DISTANCE)
        assert np.all(np.isfinite(B.weights))
        np.testing.assert_allclose(B.weights.sum(axis=1), np.ones(3), atol=1e-9)


class TestSpatialContext:
    def test_neighbor_swap(self):
        from cityboost.counterfeat import SpatialWeightMatrix

        B = SpatialWeightMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), np.arange(2), "knn-uniform")
        V = counter_matrix([[1, 2], [3, 4]])
        W = spatial_context(V, B)
        np.testing.assert_allclose(W.values, [[3, 1], [4, 2]], atol=1e-15)

    def test_uniform_rows_average_others(self, rng):
        from cityboost.counterfeat import SpatialWeightMatrix

        k = 5
        weights = np.full((k, k), 1.0 / (k - 1))
        np.fill_diagonal(weights, 0.0)
        B = SpatialWeightMatrix(weights, np.arange(k), "knn-uniform")
        values = rng.uniform(0, 10, size=(k, 7))
        W = spatial_context(counter_matrix(values), B)
        for t in range(7):
            for i in range(k):
                others = np.delete(values[:, t], i)
                assert W.values[t, i] == pytest.approx(others.mean(), rel=1e-12)

    def test_matches_triple_loop(self, rng):
        g = layout_graph(rng.uniform(0, 10, size=(4, 2)))
        B = build_weight_matrix(g, SOFTMAX_INVERSE_DISTANCE)
        values = rng.uniform(0, 100, size=(4, 6))
        W = spatial_context(counter_matrix(values), B)
        for t in range(6):
            for i in range(4):
                expected = sum(values[j, t] * B.weights[i, j] for j in range(4))
                assert abs(W.values[t, i] - expected) < 1e-9

    def test_linear_in_volumes(self, rng):
        g = layout_graph(rng.uniform(0, 10, size=(5, 2)))
        B = build_weight_matrix(g, KNN_UNIFORM, knn_k=2)
        v1 = rng.uniform(0, 10, size=(5, 8))
        v2 = rng.uniform(0, 10, size=(5, 8))
        w_sum = spatial_context(counter_matrix(v1 + v2), B)
        w1 = spatial_context(counter_matrix(v1), B)
        w2 = spatial_context(counter_matrix(v2), B)
        np.testing.assert_allclose(w_sum.values, w1.values + w2.values, atol=1e-9)

    def test_dimension_mismatch(self, rng):
        g = layout_graph(rng.uniform(0, 10, size=(3, 2)))
        B = build_weight_matrix(g, SOFTMAX_INVERSE_DISTANCE)
        with pytest.raises(DimensionMismatch):
            spatial_context(counter_matrix(rng.uniform(0, 1, size=(4, 5))), B)


def test_feature_config_validation():
    assert FeatureConfig().n_pc_last == 8
    with pytest.raises(SchemaError):
        FeatureConfig(n_pc_last=0)
    with pytest.raises(SchemaError):
        FeatureConfig(window=0)
