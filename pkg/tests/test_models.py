import numpy as np
import pytest

from sparseht import datagen
from sparseht.datagen import Additive, Missing, Multiplicative, apply_corruption
from sparseht.models import (
    GlmData,
    LeastSquaresProblem,
    LinearRegressionData,
    LowRankData,
    LowRankProblem,
    LogisticProblem,
    QuadraticProblem,
    make_corrupted_quadratic,
    make_linear_regression,
    make_logistic,
    make_lowrank,
)

from helpers import fd_gradient, mp_logistic_loss


def _ls_problem(nb=50, d=20, n=10, sigma=0.3, seed=0):
    inst = datagen.gen_regression_instance(nb=nb, d=d, k_star=4, c=0.2,
                                           sigma=sigma, seed=seed, n_batches=n)
    data = LinearRegressionData(inst.design, inst.responses, n,
                                nb // n, truth=inst.truth)
    return make_linear_regression(data), inst


class TestLeastSquares:
    def test_zero_at_truth_noiseless(self):
        prob, inst = _ls_problem(sigma=0.0)
        assert prob.value(inst.truth) == 0.0
        assert np.max(np.abs(prob.gradient(inst.truth))) <= 1e-12

    def test_single_batch_matches_direct(self):
        inst = datagen.gen_regression_instance(nb=12, d=6, k_star=2, c=0.0,
                                               sigma=0.5, seed=1, n_batches=1)
        prob = make_linear_regression(
            LinearRegressionData(inst.design, inst.responses, 1, 12)
        )
        theta = np.linspace(-1, 1, 6)
        direct = float(np.sum((inst.responses - inst.design @ theta) ** 2)) / 24
        assert prob.value(theta) == pytest.approx(direct, rel=1e-12)

    def test_value_matches_whole_matrix_oracle(self):
        prob, inst = _ls_problem(nb=50, d=20, n=10)
        rng = np.random.default_rng(2)
        theta = rng.standard_normal(20)
        nb = inst.design.shape[0]
        oracle = float((inst.responses - inst.design @ theta) @
                       (inst.responses - inst.design @ theta)) / (2 * nb)
        assert prob.value(theta) == pytest.approx(oracle, rel=1e-12)

    def test_component_gradient_finite_differences(self):
        prob, _ = _ls_problem()
        rng = np.random.default_rng(3)
        theta = rng.standard_normal(20)
        for i in (0, 4, 9):
            fd = fd_gradient(lambda t: prob.component_value(i, t), theta)
            np.testing.assert_allclose(
                prob.component_gradient(i, theta), fd, rtol=1e-5, atol=1e-7
            )

    def test_value_is_mean_of_components(self):
        prob, _ = _ls_problem()
        rng = np.random.default_rng(4)
        theta = rng.standard_normal(20)
        mean = np.mean([prob.component_value(i, theta) for i in range(10)])
        assert prob.value(theta) == pytest.approx(mean, rel=1e-12)

    def test_gradient_is_mean_of_components(self):
        prob, _ = _ls_problem()
        rng = np.random.default_rng(5)
        theta = rng.standard_normal(20)
        mean = np.mean([prob.component_gradient(i, theta) for i in range(10)], axis=0)
        np.testing.assert_allclose(prob.gradient(theta), mean, rtol=1e-12)

    def test_zero_residual_component(self):
        a = np.eye(4)
        theta = np.array([1.0, -2.0, 3.0, 0.5])
        prob = make_linear_regression(LinearRegressionData(a, a @ theta, 2, 2))
        np.testing.assert_array_equal(prob.component_gradient(0, theta), np.zeros(4))

    def test_index_range(self):
        prob, _ = _ls_problem(n=10)
        with pytest.raises(IndexError):
            prob.component_gradient(10, np.zeros(20))
        with pytest.raises(IndexError):
            prob.component_value(-1, np.zeros(20))

    def test_shape_mismatch(self):
        prob, _ = _ls_problem()
        with pytest.raises(ValueError):
            prob.value(np.zeros(21))

    def test_ragged_batching_rejected(self):
        with pytest.raises(ValueError):
            make_linear_regression(
                LinearRegressionData(np.zeros((10, 3)), np.zeros(10), 3, 3)
            )

    def test_hessian_submatrix(self):
        prob, inst = _ls_problem(nb=30, d=8, n=6)
        cols = np.array([1, 4, 6])
        nb = inst.design.shape[0]
        sub = inst.design[:, cols]
        np.testing.assert_allclose(
            prob.hessian_submatrix(cols), (sub.T @ sub) / nb, rtol=1e-12
        )
        rows = inst.design[5:10][:, cols]
        np.testing.assert_allclose(
            prob.hessian_submatrix(cols, component=1), (rows.T @ rows) / 5,
            rtol=1e-12,
        )


class TestQuadratic:
    def _random_quadratic(self, n=5, d=6, seed=6):
        rng = np.random.default_rng(seed)
        gammas = rng.standard_normal((n, d, d))
        gammas = (gammas + gammas.transpose(0, 2, 1)) / 2
        linears = rng.standard_normal((n, d))
        return QuadraticProblem(gammas, linears, batch_size=3), gammas, linears

    def test_component_value_and_gradient(self):
        prob, gammas, linears = self._random_quadratic()
        rng = np.random.default_rng(7)
        theta = rng.standard_normal(6)
        for i in range(5):
            expect = 0.5 * theta @ gammas[i] @ theta - linears[i] @ theta
            assert prob.component_value(i, theta) == pytest.approx(expect, rel=1e-12)
            np.testing.assert_allclose(
                prob.component_gradient(i, theta),
                gammas[i] @ theta - linears[i], rtol=1e-12,
            )

    def test_full_gradient_mean(self):
        prob, gammas, linears = self._random_quadratic()
        theta = np.ones(6)
        expect = gammas.mean(axis=0) @ theta - linears.mean(axis=0)
        np.testing.assert_allclose(prob.gradient(theta), expect, rtol=1e-12)

    def test_asymmetric_rejected(self):
        g = np.zeros((1, 2, 2))
        g[0, 0, 1] = 1.0
        with pytest.raises(ValueError):
            QuadraticProblem(g, np.zeros((1, 2)), batch_size=1)

    def test_gradient_finite_differences(self):
        prob, _, _ = self._random_quadratic()
        rng = np.random.default_rng(8)
        theta = rng.standard_normal(6)
        fd = fd_gradient(lambda t: prob.value(t), theta)
        np.testing.assert_allclose(prob.gradient(theta), fd, rtol=1e-5, atol=1e-7)


class TestCorruptedQuadratic:
    def test_missing_rho_zero_is_plain_least_squares(self):
        inst = datagen.gen_regression_instance(nb=24, d=5, k_star=2, c=0.0,
                                               sigma=0.2, seed=9, n_batches=6)
        z, spec = apply_corruption(inst.design, Missing(0.0), seed=9)
        prob = make_corrupted_quadratic(z, inst.responses, spec, 6)
        nb = 24
        np.testing.assert_allclose(
            prob.gamma_hat, inst.design.T @ inst.design / nb, rtol=1e-12
        )
        np.testing.assert_allclose(
            prob.b_hat, inst.design.T @ inst.responses / nb, rtol=1e-12
        )

    def test_component_means_recover_whole(self):
        inst = datagen.gen_regression_instance(nb=30, d=6, k_star=2, c=0.1,
                                               sigma=0.2, seed=10, n_batches=6)
        z, spec = apply_corruption(inst.design, Missing(0.3), seed=10)
        prob = make_corrupted_quadratic(z, inst.responses, spec, 6)
        assert np.max(np.abs(prob.gammas.mean(axis=0) - prob.gamma_hat)) <= 1e-10
        assert np.max(np.abs(prob.linears.mean(axis=0) - prob.b_hat)) <= 1e-10

    def test_missing_highdim_negative_eigenvalue(self):
        # more columns than rows: the diagonal correction drives the
        # smallest eigenvalue negative
        inst = datagen.gen_regression_instance(nb=20, d=40, k_star=3, c=0.0,
                                               sigma=0.1, seed=11, n_batches=4)
        z, spec = apply_corruption(inst.design, Missing(0.3), seed=11)
        prob = make_corrupted_quadratic(z, inst.responses, spec, 4)
        assert np.linalg.eigvalsh(prob.gamma_hat)[0] < 0.0

    def test_gradient_matches_finite_differences(self):
        inst = datagen.gen_regression_instance(nb=20, d=5, k_star=2, c=0.0,
                                               sigma=0.2, seed=12, n_batches=4)
        z, spec = apply_corruption(inst.design, Missing(0.25), seed=12)
        prob = make_corrupted_quadratic(z, inst.responses, spec, 4)
        rng = np.random.default_rng(13)
        theta = rng.standard_normal(5)
        fd = fd_gradient(lambda t: prob.value(t), theta)
        np.testing.assert_allclose(prob.gradient(theta), fd, rtol=1e-5, atol=1e-7)

    def test_additive_correction(self):
        inst = datagen.gen_regression_instance(nb=40, d=4, k_star=2, c=0.0,
                                               sigma=0.2, seed=14, n_batches=8)
        cov = np.diag([0.5, 0.5, 0.5, 0.5])
        z, spec = apply_corruption(inst.design, Additive(cov), seed=14)
        prob = make_corrupted_quadratic(z, inst.responses, spec, 8)
        np.testing.assert_allclose(
            prob.gamma_hat, z.T @ z / 40 - cov, rtol=1e-12
        )

    def test_multiplicative_correction(self):
        inst = datagen.gen_regression_instance(nb=40, d=4, k_star=2, c=0.0,
                                               sigma=0.2, seed=15, n_batches=8)
        z, spec = apply_corruption(inst.design, Multiplicative(keep_prob=0.8),
                                   seed=15)
        prob = make_corrupted_quadratic(z, inst.responses, spec, 8)
        m1, m2 = spec.moments(4)
        np.testing.assert_allclose(prob.gamma_hat, (z.T @ z / 40) / m2, rtol=1e-12)
        np.testing.assert_allclose(prob.b_hat, (z.T @ inst.responses / 40) / m1,
                                   rtol=1e-12)

    def test_unbiasedness_missing(self):
        # the corrected Gram built from corrupted data approaches the clean
        # one as samples accumulate
        rng = np.random.default_rng(16)
        a = rng.standard_normal((60_000, 4))
        y = a @ np.array([1.0, -1.0, 0.5, 0.0])
        z, spec = apply_corruption(a, Missing(0.3), seed=16)
        prob = make_corrupted_quadratic(z, y, spec, 100)
        clean = a.T @ a / a.shape[0]
        assert np.max(np.abs(prob.gamma_hat - clean)) < 0.05


class TestLogistic:
    def _problem(self, nb=40, d=10, n=8, seed=17):
        inst = datagen.gen_logistic_instance(nb=nb, d=d, k_star=3, c=0.0,
                                             seed=seed, n_batches=n)
        data = GlmData(inst.design, inst.responses, n, nb // n,
                       radius=inst.spec["radius"], truth=inst.truth)
        return make_logistic(data), inst

    def test_value_at_zero_is_log2(self):
        prob, _ = self._problem()
        assert prob.value(np.zeros(10)) == pytest.approx(np.log(2.0), rel=1e-14)

    def test_saturated_loss_vanishes(self):
        # all labels 1 and margin 30 on every row
        a = np.ones((4, 2))
        prob = make_logistic(GlmData(a, np.ones(4), 2, 2, radius=100.0))
        assert prob.value(np.array([20.0, 10.0])) < 1e-12

    def test_matches_extended_precision_oracle(self):
        prob, inst = self._problem()
        rng = np.random.default_rng(18)
        theta = rng.standard_normal(10) * 5
        margins = inst.design @ theta
        oracle = mp_logistic_loss(margins, inst.responses)
        assert prob.value(theta) == pytest.approx(oracle, abs=1e-12)

    def test_extreme_margin_grid(self):
        # one-row components across margins in [-50, 50]
        margins = np.linspace(-50.0, 50.0, 41)
        design = margins.reshape(-1, 1)
        for label in (0.0, 1.0):
            labels = np.full(margins.shape[0], label)
            prob = make_logistic(GlmData(design, labels, margins.shape[0], 1,
                                         radius=1e6))
            theta = np.array([1.0])
            for i in range(margins.shape[0]):
                oracle = mp_logistic_loss([margins[i]], [label])
                assert prob.component_value(i, theta) == pytest.approx(
                    oracle, abs=1e-12
                )

    def test_overflow_safe_at_700(self):
        a = np.array([[700.0], [-700.0]])
        prob = make_logistic(GlmData(a, np.array([1.0, 0.0]), 2, 1, radius=10.0))
        assert np.isfinite(prob.value(np.array([1.0])))
        assert np.all(np.isfinite(prob.gradient(np.array([1.0]))))

    def test_gradient_finite_differences(self):
        prob, _ = self._problem()
        rng = np.random.default_rng(19)
        theta = rng.standard_normal(10)
        for i in (0, 3, 7):
            fd = fd_gradient(lambda t: prob.component_value(i, t), theta)
            np.testing.assert_allclose(
                prob.component_gradient(i, theta), fd, rtol=1e-5, atol=1e-7
            )

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(ValueError):
            make_logistic(GlmData(np.ones((2, 2)), np.array([0.0, 2.0]), 2, 1,
                                  radius=1.0))

    def test_radius_carried(self):
        prob, inst = self._problem()
        assert prob.l2_radius == pytest.approx(inst.spec["radius"])


class TestLowRank:
    def _problem(self, d=5, p=4, nb=30, sigma=0.0, seed=20):
        inst = datagen.gen_lowrank_instance(d=d, p=p, k_star=2, nb=nb,
                                            sigma=sigma, seed=seed, n_batches=6)
        data = LowRankData(inst.design, inst.responses, 6, nb // 6,
                           truth=inst.truth)
        return make_lowrank(data), inst

    def test_zero_at_truth_noiseless(self):
        prob, inst = self._problem()
        assert prob.value(inst.truth) == pytest.approx(0.0, abs=1e-20)
        assert np.max(np.abs(prob.gradient(inst.truth))) <= 1e-12

    def test_unit_measurement_gradient(self):
        a = np.zeros((1, 3, 2))
        a[0, 0, 0] = 1.0
        prob = make_lowrank(LowRankData(a, np.array([1.0]), 1, 1))
        g = prob.gradient(np.zeros((3, 2)))
        expect = np.zeros((3, 2))
        expect[0, 0] = -1.0
        np.testing.assert_allclose(g, expect, rtol=1e-14)

    def test_gradient_finite_differences(self):
        prob, _ = self._problem(sigma=0.2)
        rng = np.random.default_rng(21)
        theta = rng.standard_normal((5, 4))
        fd = fd_gradient(lambda t: prob.value(t), theta)
        np.testing.assert_allclose(prob.gradient(theta), fd, rtol=1e-5, atol=1e-7)

    def test_equals_flattened_least_squares(self):
        prob, inst = self._problem(sigma=0.3)
        nb = inst.design.shape[0]
        flat_design = inst.design.reshape(nb, -1, order="A").copy()
        # vec is column-major: <A, Theta> = vec(A)^T vec(Theta)
        flat_design = np.stack([m.ravel(order="F") for m in inst.design])
        ls = make_linear_regression(
            LinearRegressionData(flat_design, inst.responses, 6, nb // 6)
        )
        rng = np.random.default_rng(22)
        theta = rng.standard_normal((5, 4))
        flat_theta = theta.ravel(order="F")
        assert prob.value(theta) == pytest.approx(ls.value(flat_theta), rel=1e-12)
        for i in range(6):
            np.testing.assert_allclose(
                prob.component_gradient(i, theta).ravel(order="F"),
                ls.component_gradient(i, flat_theta), rtol=1e-12,
            )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            make_lowrank(LowRankData(np.zeros((4, 3, 2)), np.zeros(5), 2, 2))
