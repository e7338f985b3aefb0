import math

import numpy as np
import pytest

from segelm import elmkit as ek
from segelm.errors import ConfigError, DimensionError

from oracles import ista_lasso, lasso_objective, svd_pinv_solution


def blob_dataset(seed=0, n=50, gap=3.0):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n, 2)) + [gap, 0.0]
    x1 = rng.standard_normal((n, 2)) - [gap, 0.0]
    features = np.vstack([x0, x1])
    classes = np.array([0] * n + [1] * n)
    return features, classes


class TestElmHidden:
    def test_sigmoid_of_zero(self):
        layer = ek.ElmHiddenLayer(np.zeros((4, 3)), np.zeros(4), "sigmoid")
        out = ek.elm_hidden(np.random.default_rng(0).standard_normal((5, 3)), layer)
        np.testing.assert_allclose(out, 0.5)

    def test_tanh_is_odd_at_zero(self):
        layer = ek.ElmHiddenLayer(np.ones((1, 1)), np.zeros(1), "tanh")
        out = ek.elm_hidden(np.zeros((1, 1)), layer)
        assert out[0, 0] == 0.0

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((5, 3))
        layer = ek.ElmHiddenLayer.random(4, 3, seed=2, activation="sigmoid")
        out = ek.elm_hidden(x, layer)
        for j in range(5):
            for i in range(4):
                z = sum(layer.weights[i, k] * x[j, k] for k in range(3)) + layer.biases[i]
                assert abs(out[j, i] - 1.0 / (1.0 + math.exp(-z))) < 1e-12

    def test_relu(self):
        layer = ek.ElmHiddenLayer(np.eye(2), np.zeros(2), "relu")
        out = ek.elm_hidden(np.array([[-1.0, 2.0]]), layer)
        np.testing.assert_array_equal(out, [[0.0, 2.0]])

    def test_dimension_mismatch(self):
        layer = ek.ElmHiddenLayer.random(4, 3, seed=0)
        with pytest.raises(DimensionError):
            ek.elm_hidden(np.zeros((5, 2)), layer)


class TestSolveOutputWeights:
    def test_invertible_square_system(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal((6, 6)) + 4.0 * np.eye(6)
        z = rng.standard_normal((6, 2))
        beta = ek.solve_output_weights(h, z)
        np.testing.assert_allclose(beta, np.linalg.solve(h, z), atol=1e-8)

    def test_normal_equations_residual(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            h = rng.standard_normal((20, 7))
            z = rng.standard_normal((20, 3))
            beta = ek.solve_output_weights(h, z)
            residual = h.T @ (h @ beta - z)
            assert np.abs(residual).max() < 1e-8

    def test_rank_deficient_minimum_norm(self):
        """A duplicated column splits its coefficient evenly (the
        minimum-norm solution), matching an SVD-assembled pseudo-inverse."""
        rng = np.random.default_rng(4)
        base = rng.standard_normal((12, 4))
        h = np.column_stack([base, base[:, 0]])
        z = rng.standard_normal((12, 2))
        beta = ek.solve_output_weights(h, z)
        np.testing.assert_allclose(beta[0], beta[4], atol=1e-10)
        np.testing.assert_allclose(beta, svd_pinv_solution(h, z), atol=1e-9)


class TestKernelMatrix:
    def test_rbf_unit_diagonal(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 3))
        k = ek.kernel_matrix(x, x, ek.KernelSpec("rbf", 1.3))
        np.testing.assert_allclose(np.diag(k), 1.0, atol=1e-14)

    def test_linear_orthogonal_rows(self):
        x = np.eye(3)
        k = ek.kernel_matrix(x, x, ek.KernelSpec("linear"))
        np.testing.assert_allclose(k, np.eye(3), atol=1e-15)

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((5, 3))
        sigma = 0.9
        k = ek.kernel_matrix(x, y, ek.KernelSpec("rbf", sigma))
        for p in range(4):
            for q in range(5):
                d2 = sum((x[p, i] - y[q, i]) ** 2 for i in range(3))
                assert abs(k[p, q] - math.exp(-d2 / (2 * sigma**2))) < 1e-12

    def test_gram_symmetric_positive_semidefinite(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((15, 4))
        for spec in (ek.KernelSpec("rbf", 1.0), ek.KernelSpec("linear")):
            k = ek.kernel_matrix(x, x, spec)
            assert np.abs(k - k.T).max() < 1e-10
            eigenvalues = np.linalg.eigvalsh(0.5 * (k + k.T))
            assert eigenvalues.min() > -1e-8 * np.trace(k)

    def test_missing_sigma_rejected(self):
        with pytest.raises(ConfigError):
            ek.kernel_matrix(np.zeros((2, 2)), np.zeros((2, 2)), ek.KernelSpec("rbf"))

    def test_invalid_sigma_rejected(self):
        with pytest.raises(ConfigError):
            ek.KernelSpec("rbf", -1.0)


class TestKelm:
    def test_large_rho_interpolates_training_labels(self):
        rng = np.random.default_rng(8)
        features = rng.standard_normal((12, 3))
        classes = rng.integers(0, 2, 12)
        classes[:2] = [0, 1]
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_kelm(data, ek.KernelSpec("rbf", 1.0), rho=1e8)
        scores, _ = ek.predict_kelm(model, features)
        assert np.abs(scores - data.targets).max() < 1e-3

    def test_separable_blobs_reach_full_training_accuracy(self):
        features, classes = blob_dataset(seed=9)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_kelm(data, ek.KernelSpec("rbf", 1.0), rho=1.0)
        _, labels = ek.predict_kelm(model, features)
        assert np.mean(labels == classes) == 1.0

    def test_duplicate_rows_stay_finite(self):
        features = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
        classes = np.array([0, 0, 1, 1])
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_kelm(data, ek.KernelSpec("linear"), rho=1.0)
        assert np.all(np.isfinite(model.alpha))

    def test_equidistant_tie_goes_to_class_zero(self):
        """With exactly antisymmetric coefficients, a point equidistant
        from the two one-point classes scores identically for both, and
        the tie resolves to the lowest class index."""
        model = ek.KelmModel(
            training_features=np.array([[1.0, 0.0], [-1.0, 0.0]]),
            alpha=np.array([[0.5, -0.5], [-0.5, 0.5]]),
            kernel=ek.KernelSpec("rbf", 1.0),
            rho=1.0,
        )
        scores, labels = ek.predict_kelm(model, np.array([[0.0, 0.0]]))
        assert scores[0, 0] == scores[0, 1]
        assert labels[0] == 0
        # a solved model lands within float error of the exact tie
        data = ek.LabeledDataset.from_class_indices(
            model.training_features, np.array([0, 1])
        )
        solved = ek.train_kelm(data, ek.KernelSpec("rbf", 1.0), rho=1.0)
        solved_scores, _ = ek.predict_kelm(solved, np.array([[0.0, 0.0]]))
        assert abs(solved_scores[0, 0] - solved_scores[0, 1]) < 1e-12

    def test_batch_matches_single_row(self):
        rng = np.random.default_rng(10)
        features, classes = blob_dataset(seed=10, n=20)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_kelm(data, ek.KernelSpec("rbf", 2.0), rho=1.0)
        batch = rng.standard_normal((10, 2))
        scores_batch, _ = ek.predict_kelm(model, batch)
        for i in range(10):
            row_scores, _ = ek.predict_kelm(model, batch[i : i + 1])
            np.testing.assert_allclose(row_scores[0], scores_batch[i], atol=1e-12)

    def test_median_heuristic_resolved_and_stored(self):
        features, classes = blob_dataset(seed=11, n=10)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_kelm(data, ek.KernelSpec("rbf", None), rho=1.0)
        assert model.kernel.sigma is not None and model.kernel.sigma > 0
        assert model.kernel.sigma == pytest.approx(
            ek.median_heuristic_sigma(features)
        )


class TestFista:
    def test_zero_weight_recovers_least_squares(self):
        rng = np.random.default_rng(12)
        # well-conditioned by construction: singular values in [1, 2]
        q1, _ = np.linalg.qr(rng.standard_normal((20, 20)))
        q2, _ = np.linalg.qr(rng.standard_normal((20, 20)))
        a = q1 @ np.diag(np.linspace(1.0, 2.0, 20)) @ q2
        x = rng.standard_normal((20, 2))
        beta = ek.fista_lasso(a, x, ek.FistaConfig(iterations=3000, l1_weight=0.0))
        optimum = np.linalg.solve(a, x)
        assert lasso_objective(a, x, beta, 0.0) - lasso_objective(a, x, optimum, 0.0) < 1e-8
        np.testing.assert_allclose(beta, optimum, atol=1e-6)

    def test_huge_weight_gives_exact_zero(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((10, 15))
        x = rng.standard_normal((10, 2))
        lam = 2.0 * np.abs(a.T @ x).max() + 1.0
        beta = ek.fista_lasso(a, x, ek.FistaConfig(iterations=50, l1_weight=lam))
        np.testing.assert_array_equal(beta, np.zeros((15, 2)))

    def test_matches_long_ista_run(self):
        for trial in range(3):
            rng = np.random.default_rng(100 + trial)
            a = rng.standard_normal((50, 100)) / math.sqrt(50)
            x = rng.standard_normal((50, 3)) * 0.2
            beta = ek.fista_lasso(a, x, ek.FistaConfig(iterations=3000, l1_weight=0.1))
            reference = ista_lasso(a, x, 0.1, 10_000)
            mine = lasso_objective(a, x, beta, 0.1)
            ref = lasso_objective(a, x, reference, 0.1)
            assert abs(mine - ref) / ref < 1e-6

    def test_optimality_conditions(self):
        rng = np.random.default_rng(14)
        lam = 0.1
        a = rng.standard_normal((30, 60)) / math.sqrt(30)
        x = rng.standard_normal((30, 2)) * 0.3
        beta = ek.fista_lasso(a, x, ek.FistaConfig(iterations=4000, l1_weight=lam))
        gradient = 2.0 * (a.T @ (a @ beta - x))
        nonzero = beta != 0
        assert np.abs(gradient[nonzero] + lam * np.sign(beta[nonzero])).max() <= 1e-4 * lam * 10
        assert np.abs(gradient[~nonzero]).max() <= lam + 1e-4

    def test_smooth_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        a = rng.standard_normal((12, 8))
        x = rng.standard_normal((12, 3))
        beta = rng.standard_normal((8, 3))
        gradient = 2.0 * (a.T @ (a @ beta - x))
        h = 1e-6
        for _ in range(20):
            k = int(rng.integers(0, 8))
            l = int(rng.integers(0, 3))
            up, down = beta.copy(), beta.copy()
            up[k, l] += h
            down[k, l] -= h
            fd = (np.sum((a @ up - x) ** 2) - np.sum((a @ down - x) ** 2)) / (2 * h)
            assert abs(fd - gradient[k, l]) / max(abs(gradient[k, l]), 1e-8) < 1e-5

    def test_deterministic(self):
        rng = np.random.default_rng(16)
        a = rng.standard_normal((10, 20))
        x = rng.standard_normal((10, 2))
        config = ek.FistaConfig(iterations=100, l1_weight=0.05)
        np.testing.assert_array_equal(
            ek.fista_lasso(a, x, config), ek.fista_lasso(a, x, config)
        )

    def test_row_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            ek.fista_lasso(np.zeros((5, 3)), np.zeros((4, 2)), ek.FistaConfig())


class TestSparseLayer:
    def test_deterministic_in_seed(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((15, 6))
        one = ek.train_sparse_layer(x, 8, "sigmoid", ek.FistaConfig(iterations=50), seed=3)
        two = ek.train_sparse_layer(x, 8, "sigmoid", ek.FistaConfig(iterations=50), seed=3)
        np.testing.assert_array_equal(one.beta, two.beta)

    def test_zero_input_gives_zero_weights(self):
        layer = ek.train_sparse_layer(
            np.zeros((10, 4)), 6, "sigmoid", ek.FistaConfig(iterations=50), seed=1
        )
        np.testing.assert_array_equal(layer.beta, np.zeros((6, 4)))

    def test_reconstruction_beats_zero_baseline(self):
        rng = np.random.default_rng(18)
        x = rng.standard_normal((40, 10))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        layer = ek.train_sparse_layer(
            x, 20, "sigmoid", ek.FistaConfig(iterations=300, l1_weight=1e-3), seed=2
        )
        mapping = ek.ElmHiddenLayer.random(20, 10, seed=2, activation="sigmoid")
        a = ek.elm_hidden(x, mapping)
        assert np.linalg.norm(a @ layer.beta - x) < np.linalg.norm(x)


class TestForwardLayer:
    def test_sigmoid_of_zero_input(self):
        layer = ek.SparseLayer(np.ones((4, 3)), "sigmoid")
        out = ek.forward_layer(np.zeros((2, 3)), layer)
        np.testing.assert_allclose(out, 0.5)

    def test_composition_equals_unrolled(self):
        rng = np.random.default_rng(19)
        h0 = rng.standard_normal((5, 4))
        layer1 = ek.SparseLayer(rng.standard_normal((6, 4)), "sigmoid")
        layer2 = ek.SparseLayer(rng.standard_normal((3, 6)), "sigmoid")
        composed = ek.forward_layer(ek.forward_layer(h0, layer1), layer2)
        from scipy.special import expit

        unrolled = expit(expit(h0 @ layer1.beta.T) @ layer2.beta.T)
        np.testing.assert_allclose(composed, unrolled, atol=1e-15)

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(20)
        h0 = rng.standard_normal((3, 4))
        layer = ek.SparseLayer(rng.standard_normal((2, 4)), "sigmoid")
        out = ek.forward_layer(h0, layer)
        for j in range(3):
            for i in range(2):
                z = sum(h0[j, k] * layer.beta[i, k] for k in range(4))
                assert abs(out[j, i] - 1.0 / (1.0 + math.exp(-z))) < 1e-12

    def test_wrong_width_rejected(self):
        layer = ek.SparseLayer(np.ones((4, 3)), "sigmoid")
        with pytest.raises(DimensionError):
            ek.forward_layer(np.zeros((2, 5)), layer)


class TestKhElm:
    def test_single_layer_unrolls_explicitly(self):
        features, classes = blob_dataset(seed=21, n=15)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        fista = ek.FistaConfig(iterations=100)
        kernel = ek.KernelSpec("rbf", 1.5)
        model = ek.train_khelm(data, [10], kernel, 1.0, fista, seed=4)

        lo, hi = features.min(axis=0), features.max(axis=0)
        scaled = (features - lo) / (hi - lo)
        from segelm.seeding import derive_seed

        layer = ek.train_sparse_layer(scaled, 10, "sigmoid", fista, derive_seed(4, 0))
        h1 = ek.forward_layer(scaled, layer)
        head = ek.train_kelm(
            ek.LabeledDataset(h1, data.targets), kernel, 1.0
        )
        expected, _ = ek.predict_kelm(head, h1)
        actual, _ = ek.predict_khelm(model, features)
        np.testing.assert_allclose(actual, expected, atol=1e-12)

    def test_deterministic(self):
        features, classes = blob_dataset(seed=22, n=12)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        kwargs = dict(
            layer_sizes=[8], kernel=ek.KernelSpec("rbf", None), rho=1.0,
            fista=ek.FistaConfig(iterations=60), seed=9,
        )
        one = ek.train_khelm(data, **kwargs)
        two = ek.train_khelm(data, **kwargs)
        s1, _ = ek.predict_khelm(one, features)
        s2, _ = ek.predict_khelm(two, features)
        np.testing.assert_array_equal(s1, s2)

    def test_stacked_model_close_to_kelm_on_blobs(self):
        features, classes = blob_dataset(seed=23)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        kelm = ek.train_kelm(data, ek.KernelSpec("rbf", None), 1.0)
        _, kelm_labels = ek.predict_kelm(kelm, features)
        kh = ek.train_khelm(
            data, [30], ek.KernelSpec("rbf", None), 1.0,
            ek.FistaConfig(iterations=200), seed=1,
        )
        _, kh_labels = ek.predict_khelm(kh, features)
        kelm_acc = np.mean(kelm_labels == classes)
        kh_acc = np.mean(kh_labels == classes)
        assert kh_acc >= kelm_acc - 0.02

    def test_clipping_below_training_minimum(self):
        features, classes = blob_dataset(seed=24, n=10)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_khelm(
            data, [6], ek.KernelSpec("rbf", 1.0), 1.0,
            ek.FistaConfig(iterations=50), seed=2,
        )
        below = model.feature_min - 10.0
        at_min = model.feature_min.copy()
        s_below, _ = ek.predict_khelm(model, below[None, :])
        s_at, _ = ek.predict_khelm(model, at_min[None, :])
        np.testing.assert_allclose(s_below, s_at, atol=1e-12)

    def test_batch_matches_single_row(self):
        features, classes = blob_dataset(seed=25, n=10)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_khelm(
            data, [6], ek.KernelSpec("rbf", 1.0), 1.0,
            ek.FistaConfig(iterations=50), seed=3,
        )
        batch_scores, _ = ek.predict_khelm(model, features[:7])
        for i in range(7):
            row, _ = ek.predict_khelm(model, features[i : i + 1])
            np.testing.assert_allclose(row[0], batch_scores[i], atol=1e-12)

    def test_degenerate_feature_scales_to_zero(self):
        rng = np.random.default_rng(26)
        features = rng.standard_normal((12, 3))
        features[:, 1] = 7.0
        classes = np.array([0, 1] * 6)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_khelm(
            data, [4], ek.KernelSpec("rbf", 1.0), 1.0,
            ek.FistaConfig(iterations=30), seed=5,
        )
        assert model.feature_min[1] == model.feature_max[1] == 7.0

    def test_empty_layer_sizes_rejected(self):
        features, classes = blob_dataset(seed=27, n=5)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        with pytest.raises(ConfigError):
            ek.train_khelm(
                data, [], ek.KernelSpec("rbf", 1.0), 1.0, ek.FistaConfig(), seed=0
            )


class TestLabeledDataset:
    def test_target_rows_validated(self):
        with pytest.raises(DimensionError):
            ek.LabeledDataset(np.zeros((4, 2)), np.ones((4, 2)))

    def test_class_indices_round_trip(self):
        features = np.zeros((4, 2))
        classes = np.array([0, 1, 1, 0])
        data = ek.LabeledDataset.from_class_indices(features, classes)
        np.testing.assert_array_equal(data.class_indices, classes)
        assert data.class_count == 2

    def test_fewer_samples_than_classes_rejected(self):
        with pytest.raises(DimensionError):
            ek.LabeledDataset.from_class_indices(np.zeros((2, 2)), np.array([0, 1]), 3)


class TestModelJson:
    def test_round_trip_is_exact(self, tmp_path):
        features, classes = blob_dataset(seed=28, n=10)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_khelm(
            data, [5], ek.KernelSpec("rbf", None), 0.7,
            ek.FistaConfig(iterations=40), seed=6,
        )
        path = tmp_path / "model.json"
        ek.save_model(model, path)
        again = ek.load_model(path)
        np.testing.assert_array_equal(again.layers[0].beta, model.layers[0].beta)
        np.testing.assert_array_equal(again.head.alpha, model.head.alpha)
        assert again.head.kernel == model.head.kernel
        s1, _ = ek.predict_khelm(model, features)
        s2, _ = ek.predict_khelm(again, features)
        np.testing.assert_array_equal(s1, s2)

    def test_format_fields(self, tmp_path):
        import json

        features, classes = blob_dataset(seed=29, n=8)
        data = ek.LabeledDataset.from_class_indices(features, classes)
        model = ek.train_khelm(
            data, [4], ek.KernelSpec("linear"), 1.0,
            ek.FistaConfig(iterations=30), seed=7,
        )
        path = tmp_path / "model.json"
        ek.save_model(model, path)
        payload = json.loads(path.read_text())
        assert payload["format_version"] == 1
        assert sorted(payload) == ["format_version", "head", "layers", "scaling"]
        assert sorted(payload["head"]) == ["alpha", "kernel", "rho", "training_features"]
        assert sorted(payload["scaling"]) == ["max", "min"]

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"format_version": 2}')
        with pytest.raises(ConfigError):
            ek.load_model(path)
