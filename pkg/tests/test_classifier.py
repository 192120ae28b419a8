import math

import numpy as np
import pytest

from pyrovigil.classifier import (
    Kernel,
    KernelKind,
    TrainedModel,
    chi2_distance_matrix,
    cross_validate,
    decision_function,
    kernel_eval,
    kernel_matrix,
    predict,
    read_model,
    train,
    write_model,
)
from pyrovigil.codebook import BlobFeature
from pyrovigil.errors import ConvergenceError, DataError


RBF1 = Kernel(KernelKind.RBF, 1.0)


class TestKernels:
    def test_rbf_self_is_one(self, rng):
        a = rng.normal(size=9)
        assert kernel_eval(RBF1, a, a) == 1.0

    def test_linear_zero_vector(self, rng):
        a = rng.normal(size=5)
        assert kernel_eval(Kernel(KernelKind.LINEAR), a, np.zeros(5)) == 0.0

    def test_chi2_fixed_histograms(self):
        # scalar evaluation oracle: sum (a-b)^2/(a+b) = 0.48095238...,
        # K = exp(-0.5 * that) = 0.7862533655434848
        a = [0.1, 0.4, 0.3, 0.2]
        b = [0.3, 0.3, 0.0, 0.4]
        dist = sum(
            (x - y) ** 2 / (x + y) for x, y in zip(a, b) if x + y > 0
        )
        got = kernel_eval(Kernel(KernelKind.CHI2, 0.5), a, b)
        assert abs(got - math.exp(-0.5 * dist)) <= 1e-12
        assert abs(got - 0.7862533655434848) <= 1e-12

    def test_chi2_zero_over_zero(self):
        k = kernel_eval(Kernel(KernelKind.CHI2, 1.0), [0.0, 0.5], [0.0, 0.5])
        assert k == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            kernel_eval(RBF1, np.zeros(3), np.zeros(4))

    def test_gamma_validation(self):
        with pytest.raises(ValueError):
            Kernel(KernelKind.RBF, 0.0)
        Kernel(KernelKind.LINEAR)  # no gamma needed

    def test_chi2_matrix_matches_scalar(self, rng):
        X = rng.random((6, 8))
        D = chi2_distance_matrix(X, X)
        for i in range(6):
            for j in range(6):
                want = sum(
                    (a - b) ** 2 / (a + b)
                    for a, b in zip(X[i], X[j])
                    if a + b > 0
                )
                assert abs(D[i, j] - want) <= 1e-12

    def test_gram_psd_spot_check(self, rng):
        X = rng.random((20, 12))
        K = kernel_matrix(Kernel(KernelKind.RBF, 2.0), X)
        eig = np.linalg.eigvalsh(K)
        assert eig.min() >= -1e-8


class TestTrain:
    def test_two_point_analytic(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        y = np.array([1.0, -1.0])
        model = train(X, y, kernel=Kernel(KernelKind.LINEAR), C=1000.0)
        assert model.support_vectors.shape[0] == 2
        margins = decision_function(model, X)
        assert abs(margins[0] - 1.0) <= 1e-6
        assert abs(margins[1] + 1.0) <= 1e-6

    def test_xor_rbf(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        model = train(X, y, kernel=RBF1, C=10.0)
        for xi, yi in zip(X, y):
            label, _ = predict(model, xi)
            assert label == yi

    def test_duplicating_samples_keeps_boundary(self, rng):
        X = rng.normal(size=(30, 4))
        y = np.where(X[:, 0] + 0.5 * X[:, 1] > 0, 1.0, -1.0)
        m1 = train(X, y, kernel=RBF1, C=5.0)
        m2 = train(np.vstack([X, X]), np.concatenate([y, y]), kernel=RBF1, C=5.0)
        probes = rng.normal(size=(50, 4))
        p1 = np.sign(decision_function(m1, probes))
        p2 = np.sign(decision_function(m2, probes))
        assert np.array_equal(p1, p2)

    def test_objective_monotone(self, rng):
        X = rng.normal(size=(40, 6))
        y = np.where(rng.random(40) > 0.5, 1.0, -1.0)
        y[:3] = 1.0
        y[3:6] = -1.0
        model = train(X, y, kernel=RBF1, C=2.0)
        trace = model.objective_trace
        assert len(trace) == model.n_iterations
        assert np.all(np.diff(trace) >= -1e-9)

    def test_kkt_margins_of_free_svs(self, rng):
        X = rng.normal(size=(60, 5))
        y = np.where(X[:, 0] + 0.3 * rng.normal(size=60) > 0, 1.0, -1.0)
        y[:2] = 1.0
        y[2:4] = -1.0
        model = train(X, y, kernel=RBF1, C=3.0)
        # recover free SVs: |coef| strictly inside the box for its class
        w_pos, w_neg = model.class_weights
        caps = np.where(model.coef > 0, model.C * w_pos, model.C * w_neg)
        free = (np.abs(model.coef) > 1e-6 * caps) & (np.abs(model.coef) < caps * 0.999)
        margins = decision_function(model, model.support_vectors[free])
        labels = np.sign(model.coef[free])
        assert np.all(np.abs(margins - labels) <= 1e-3 + 1e-9)

    def test_margin_linear_in_alpha(self, rng):
        X = rng.normal(size=(20, 3))
        y = np.where(X[:, 0] > 0, 1.0, -1.0)
        model = train(X, y, kernel=RBF1, C=2.0)
        probe = rng.normal(size=3)
        _, margin = predict(model, probe)
        doubled = TrainedModel(
            kernel=model.kernel,
            support_vectors=model.support_vectors,
            coef=model.coef * 2.0,
            bias=model.bias * 2.0,
            C=model.C,
            class_weights=model.class_weights,
        )
        label2, margin2 = predict(doubled, probe)
        assert abs(margin2 - 2.0 * margin) <= 1e-9
        assert label2 == (1 if margin >= 0 else -1)

    def test_prediction_independent_of_sv_order(self, rng):
        X = rng.normal(size=(30, 4))
        y = np.where(X.sum(axis=1) > 0, 1.0, -1.0)
        model = train(X, y, kernel=RBF1, C=2.0)
        perm = rng.permutation(model.support_vectors.shape[0])
        shuffled = TrainedModel(
            kernel=model.kernel,
            support_vectors=model.support_vectors[perm],
            coef=model.coef[perm],
            bias=model.bias,
            C=model.C,
            class_weights=model.class_weights,
        )
        probes = rng.normal(size=(20, 4))
        assert np.allclose(
            decision_function(model, probes), decision_function(shuffled, probes),
            atol=1e-12,
        )

    def test_zero_margin_ties_to_fire(self):
        model = TrainedModel(
            kernel=Kernel(KernelKind.LINEAR),
            support_vectors=np.array([[1.0]]),
            coef=np.array([1.0]),
            bias=0.0,
            C=1.0,
            class_weights=(1.0, 1.0),
        )
        label, margin = predict(model, np.array([0.0]))
        assert margin == 0.0
        assert label == 1

    def test_balance_weights(self):
        X = np.vstack([np.full((3, 2), 1.0) + np.eye(3, 2) * 0.1,
                       np.full((9, 2), -1.0) + np.arange(9)[:, None] * 0.01])
        y = np.concatenate([np.ones(3), -np.ones(9)])
        model = train(X, y, kernel=RBF1, C=1.0, balance=True)
        w_pos, w_neg = model.class_weights
        assert abs(w_pos / w_neg - 9.0 / 3.0) <= 1e-12
        assert max(w_pos, w_neg) == 1.0

    def test_contradictory_labels_converge_at_bounds(self):
        # identical points with opposite labels: not separable; alphas
        # saturate the box and the solver still satisfies the KKT gap
        X = np.array([[1.0, 1.0], [1.0, 1.0], [3.0, 0.0], [-3.0, 0.0]])
        y = np.array([1.0, -1.0, 1.0, -1.0])
        model = train(X, y, kernel=RBF1, C=2.0, balance=False)
        assert model.final_violation <= 1e-3
        assert np.all(np.abs(model.coef) <= 2.0 + 1e-12)

    def test_chi2_training_end_to_end(self, rng):
        # histogram-like rows, chi-square kernel
        X = rng.random((30, 16))
        X /= X.sum(axis=1, keepdims=True)
        y = np.where(X[:, 0] > np.median(X[:, 0]), 1.0, -1.0)
        model = train(X, y, kernel=Kernel(KernelKind.CHI2, 2.0), C=50.0)
        pred = np.sign(decision_function(model, X))
        assert (pred == y).mean() >= 0.9

    def test_input_validation(self, rng):
        X = rng.normal(size=(10, 3))
        y = np.where(np.arange(10) < 5, 1.0, -1.0)
        bad = X.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            train(bad, y, kernel=RBF1, C=1.0)
        with pytest.raises(ValueError, match="each label"):
            train(X, np.ones(10), kernel=RBF1, C=1.0)
        with pytest.raises(ValueError, match="C must be"):
            train(X, y, kernel=RBF1, C=0.0)

    def test_nonconvergence_carries_violation(self, rng):
        X = rng.normal(size=(40, 4))
        y = np.where(rng.random(40) > 0.5, 1.0, -1.0)
        y[:2], y[2:4] = 1.0, -1.0
        with pytest.raises(ConvergenceError) as exc:
            train(X, y, kernel=RBF1, C=100.0, max_iter=2)
        assert exc.value.violation > 1e-3

    def test_fingerprint_mismatch_rejected(self, rng):
        X = rng.normal(size=(10, 4))
        y = np.where(np.arange(10) < 5, 1.0, -1.0)
        model = train(X, y, kernel=RBF1, C=1.0, codebook_fingerprint=b"a" * 32)
        feat = BlobFeature(np.zeros(2), np.zeros(2), codebook_fingerprint=b"b" * 32)
        with pytest.raises(ValueError, match="pairing"):
            predict(model, feat)

    def test_blobfeature_pairs_accepted(self, rng):
        feats = [
            (BlobFeature(np.array([1.0, 0.0]), np.zeros(0)), 1),
            (BlobFeature(np.array([0.9, 0.1]), np.zeros(0)), 1),
            (BlobFeature(np.array([0.0, 1.0]), np.zeros(0)), -1),
            (BlobFeature(np.array([0.1, 0.9]), np.zeros(0)), -1),
        ]
        model = train(feats, kernel=RBF1, C=10.0)
        label, _ = predict(model, feats[0][0])
        assert label == 1


class TestCrossValidate:
    def test_separable_reaches_one(self, rng):
        X = np.vstack([rng.normal(3.0, 0.2, (20, 3)), rng.normal(-3.0, 0.2, (20, 3))])
        y = np.concatenate([np.ones(20), -np.ones(20)])
        report = cross_validate(
            X, y, KernelKind.RBF, folds=5,
            c_values=2.0 ** np.arange(-2, 5, 2),
            gamma_values=2.0 ** np.arange(-4, 3, 2),
            seed=0,
        )
        assert report.best_accuracy == 1.0

    def test_shuffled_labels_near_chance(self, rng):
        X = rng.normal(size=(200, 8))
        y = np.concatenate([np.ones(100), -np.ones(100)])
        rng.shuffle(y)
        report = cross_validate(
            X, y, KernelKind.RBF, folds=5,
            c_values=2.0 ** np.arange(-2, 3, 2),
            gamma_values=2.0 ** np.arange(-2, 3, 2),
            seed=1,
        )
        assert report.best_accuracy <= 0.65

    def test_best_equals_grid_max(self, rng):
        X = rng.normal(size=(30, 4))
        y = np.where(X[:, 0] > 0, 1.0, -1.0)
        y[:3], y[3:6] = 1.0, -1.0
        report = cross_validate(
            X, y, KernelKind.RBF, folds=3,
            c_values=[0.5, 2.0], gamma_values=[0.25, 1.0], seed=2,
        )
        assert report.best_accuracy == report.accuracy.max()
        ci = report.c_values.tolist().index(report.best_c)
        gi = report.gamma_values.tolist().index(report.best_gamma)
        assert report.accuracy[ci, gi] == report.best_accuracy

    def test_deterministic(self, rng):
        X = rng.normal(size=(24, 3))
        y = np.where(np.arange(24) % 2 == 0, 1.0, -1.0)
        kw = dict(folds=3, c_values=[1.0], gamma_values=[0.5], seed=7)
        r1 = cross_validate(X, y, KernelKind.RBF, **kw)
        r2 = cross_validate(X, y, KernelKind.RBF, **kw)
        assert np.array_equal(r1.accuracy, r2.accuracy)

    def test_too_few_samples(self, rng):
        X = rng.normal(size=(6, 3))
        y = np.array([1.0, 1.0, 1.0, 1.0, -1.0, -1.0])
        with pytest.raises(ValueError, match="per class"):
            cross_validate(X, y, KernelKind.RBF, folds=5)

    def test_linear_collapses_gamma_axis(self, rng):
        X = np.vstack([rng.normal(2, 0.3, (10, 2)), rng.normal(-2, 0.3, (10, 2))])
        y = np.concatenate([np.ones(10), -np.ones(10)])
        report = cross_validate(
            X, y, KernelKind.LINEAR, folds=2, c_values=[1.0, 4.0], seed=0
        )
        assert report.accuracy.shape == (2, 1)

    def test_default_grid_is_powers_of_two(self):
        from pyrovigil.classifier import default_grid

        grid = default_grid()
        assert len(grid) == 17
        assert grid[0] == 2.0**-8
        assert grid[-1] == 2.0**8


class TestModelIO:
    def test_roundtrip(self, rng, tmp_path):
        X = rng.normal(size=(12, 5))
        y = np.where(np.arange(12) < 6, 1.0, -1.0)
        model = train(
            X, y, kernel=Kernel(KernelKind.RBF, 0.7), C=3.0,
            codebook_fingerprint=b"f" * 32,
        )
        path = tmp_path / "model.pvsm"
        write_model(model, path)
        back = read_model(path)
        assert back.kernel == model.kernel
        assert back.C == model.C
        assert back.class_weights == model.class_weights
        assert back.bias == model.bias
        assert back.codebook_fingerprint == model.codebook_fingerprint
        assert np.array_equal(back.support_vectors, model.support_vectors)
        assert np.array_equal(back.coef, model.coef)

    def test_magic(self, rng, tmp_path):
        X = rng.normal(size=(6, 2))
        y = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
        model = train(X, y, kernel=RBF1, C=1.0)
        path = tmp_path / "m.pvsm"
        write_model(model, path)
        assert path.read_bytes()[:4] == b"PVSM"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.pvsm"
        path.write_bytes(b"WHAT" + b"\x00" * 100)
        with pytest.raises(DataError, match="magic"):
            read_model(path)
