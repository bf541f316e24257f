import json

import numpy as np
import pytest

from sparseht import datagen
from sparseht.datagen import (
    Additive,
    Missing,
    Multiplicative,
    SyntheticInstance,
    apply_corruption,
    gen_equicorrelated_design,
    gen_linear_responses,
    gen_logistic_instance,
    gen_logistic_responses,
    gen_lowrank_instance,
    gen_regression_instance,
    gen_sparse_truth,
    load_instance,
    load_libsvm,
    save_instance,
)

from helpers import write_libsvm


class TestDesign:
    def test_determinism(self):
        a = gen_equicorrelated_design(50, 20, 0.4, seed=9)
        b = gen_equicorrelated_design(50, 20, 0.4, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_c_zero_column_variances(self):
        a = gen_equicorrelated_design(2000, 10, 0.0, seed=1)
        v = a.var(axis=0, ddof=1)
        assert np.all(v > 0.9) and np.all(v < 1.1)

    def test_c_half_offdiagonal_correlation(self):
        a = gen_equicorrelated_design(5000, 20, 0.5, seed=2)
        corr = np.corrcoef(a.T)
        off = corr[~np.eye(20, dtype=bool)]
        assert 0.47 < off.mean() < 0.53

    def test_sample_covariance_close(self):
        a = gen_equicorrelated_design(100_000, 30, 0.3, seed=3)
        sigma = np.full((30, 30), 0.3)
        np.fill_diagonal(sigma, 1.0)
        emp = (a.T @ a) / a.shape[0]
        assert np.max(np.abs(emp - sigma)) <= 0.05

    def test_c_out_of_range(self):
        with pytest.raises(ValueError):
            gen_equicorrelated_design(10, 5, 1.0, seed=0)
        with pytest.raises(ValueError):
            gen_equicorrelated_design(10, 5, -0.1, seed=0)


class TestTruth:
    def test_exact_sparsity(self):
        for seed in range(20):
            t = gen_sparse_truth(50, 7, seed)
            assert np.count_nonzero(t) == 7

    def test_magnitudes_below_two(self):
        t = gen_sparse_truth(200, 50, seed=4)
        nz = t[t != 0]
        assert np.all(np.abs(nz) < 2.0)

    def test_nonzero_mean_near_zero(self):
        vals = np.concatenate(
            [gen_sparse_truth(100, 50, seed)[gen_sparse_truth(100, 50, seed) != 0]
             for seed in range(200)]
        )
        assert abs(vals.mean()) < 0.05

    def test_k_star_bounds(self):
        with pytest.raises(ValueError):
            gen_sparse_truth(5, 6, seed=0)
        with pytest.raises(ValueError):
            gen_sparse_truth(5, 0, seed=0)


class TestResponses:
    def test_sigma_zero_exact(self):
        a = gen_equicorrelated_design(30, 10, 0.0, seed=5)
        t = gen_sparse_truth(10, 3, seed=5)
        y = gen_linear_responses(a, t, 0.0, seed=5)
        np.testing.assert_array_equal(y, a @ t)

    def test_residual_std(self):
        a = gen_equicorrelated_design(5000, 10, 0.0, seed=6)
        t = gen_sparse_truth(10, 3, seed=6)
        y = gen_linear_responses(a, t, 1.0, seed=6)
        resid = y - a @ t
        assert 0.96 < resid.std(ddof=1) < 1.04

    def test_determinism(self):
        a = gen_equicorrelated_design(40, 8, 0.2, seed=7)
        t = gen_sparse_truth(8, 2, seed=7)
        np.testing.assert_array_equal(
            gen_linear_responses(a, t, 0.5, seed=7),
            gen_linear_responses(a, t, 0.5, seed=7),
        )

    def test_logistic_balanced_at_zero_truth(self):
        a = gen_equicorrelated_design(10_000, 5, 0.0, seed=8)
        y = gen_logistic_responses(a, np.zeros(5), seed=8)
        assert set(np.unique(y)) <= {0.0, 1.0}
        assert 0.48 < y.mean() < 0.52

    def test_logistic_saturation(self):
        # margin 30 on every row: success probability 1 - 9e-14
        a = np.ones((1000, 1))
        y = gen_logistic_responses(a, np.array([30.0]), seed=9)
        assert np.all(y == 1.0)


class TestCorruption:
    def test_missing_rho_zero_identity(self):
        a = gen_equicorrelated_design(20, 6, 0.0, seed=10)
        z, _ = apply_corruption(a, Missing(0.0), seed=10)
        np.testing.assert_array_equal(z, a)

    def test_missing_fraction(self):
        a = np.ones((1000, 1000))
        z, _ = apply_corruption(a, Missing(0.3), seed=11)
        frac = 1.0 - z.mean()
        assert 0.298 < frac < 0.302

    def test_missing_never_perturbs(self):
        a = gen_equicorrelated_design(50, 20, 0.0, seed=12)
        z, _ = apply_corruption(a, Missing(0.4), seed=12)
        assert np.all((z == 0.0) | (z == a))

    def test_additive_zero_noise_identity(self):
        a = gen_equicorrelated_design(15, 4, 0.0, seed=13)
        z, _ = apply_corruption(a, Additive(0.0), seed=13)
        np.testing.assert_array_equal(z, a)

    def test_additive_full_covariance(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        a = np.zeros((20_000, 2))
        z, _ = apply_corruption(a, Additive(cov), seed=14)
        emp = (z.T @ z) / z.shape[0]
        assert np.max(np.abs(emp - cov)) < 0.1

    def test_multiplicative_bernoulli(self):
        a = np.ones((500, 500))
        z, spec = apply_corruption(a, Multiplicative(keep_prob=0.8), seed=15)
        assert np.all((z == 0.0) | (z == 1.0))
        assert 0.78 < z.mean() < 0.82
        m1, m2 = spec.moments(3)
        np.testing.assert_allclose(m1, 0.8)
        expect_m2 = np.full((3, 3), 0.64)
        np.fill_diagonal(expect_m2, 0.8)
        np.testing.assert_allclose(m2, expect_m2)

    def test_multiplicative_needs_keep_prob_to_sample(self):
        spec = Multiplicative(first_moment=np.full(3, 0.5),
                              second_moment=np.full((3, 3), 0.5))
        with pytest.raises(ValueError):
            apply_corruption(np.ones((3, 3)), spec, seed=0)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            Missing(1.0)
        with pytest.raises(ValueError):
            Multiplicative()  # needs exactly one of keep_prob / moments
        with pytest.raises(ValueError):
            Additive(np.array([[1.0, 2.0], [0.0, 1.0]])).covariance(2)


class TestInstances:
    def test_regression_shapes_and_spec(self):
        inst = gen_regression_instance(nb=60, d=30, k_star=4, c=0.2,
                                       sigma=0.1, seed=16, n_batches=12)
        assert inst.design.shape == (60, 30)
        assert inst.n_batches == 12 and inst.batch_size == 5
        assert np.count_nonzero(inst.truth) == 4
        assert inst.spec["seed"] == 16

    def test_default_batch_size_five(self):
        inst = gen_regression_instance(nb=100, d=10, k_star=2, c=0.0,
                                       sigma=0.0, seed=17)
        assert inst.batch_size == 5 and inst.n_batches == 20

    def test_bitwise_reproducible(self):
        a = gen_regression_instance(nb=40, d=20, k_star=3, c=0.3, sigma=0.2, seed=18)
        b = gen_regression_instance(nb=40, d=20, k_star=3, c=0.3, sigma=0.2, seed=18)
        np.testing.assert_array_equal(a.design, b.design)
        np.testing.assert_array_equal(a.responses, b.responses)
        np.testing.assert_array_equal(a.truth, b.truth)

    def test_responses_rebuild_from_components(self):
        inst = gen_regression_instance(nb=40, d=20, k_star=3, c=0.3,
                                       sigma=0.2, seed=19)
        rebuilt = gen_linear_responses(inst.design, inst.truth,
                                       inst.sigma, seed=19)
        np.testing.assert_array_equal(inst.responses, rebuilt)

    def test_logistic_instance(self):
        inst = gen_logistic_instance(nb=80, d=25, k_star=3, c=0.0, seed=20)
        assert set(np.unique(inst.responses)) <= {0.0, 1.0}
        assert inst.spec["radius"] == pytest.approx(
            10.0 * np.linalg.norm(inst.truth)
        )

    def test_lowrank_instance(self):
        inst = gen_lowrank_instance(d=10, p=8, k_star=3, nb=40, sigma=0.0, seed=21)
        assert inst.design.shape == (40, 10, 8)
        s = np.linalg.svd(inst.truth, compute_uv=False)
        assert s[2] > 1e-8 and s[3] < 1e-10
        # sigma=0 responses are the exact measurements of the truth
        direct = np.einsum("ndp,dp->n", inst.design, inst.truth)
        np.testing.assert_allclose(inst.responses, direct, rtol=1e-12)

    def test_ragged_batching_rejected(self):
        with pytest.raises(ValueError):
            gen_regression_instance(nb=10, d=5, k_star=1, c=0.0, sigma=0.0,
                                    seed=0, n_batches=3)

    def test_response_length_validated(self):
        with pytest.raises(ValueError):
            SyntheticInstance(kind="linear", design=np.zeros((4, 2)),
                              responses=np.zeros(3), truth=None, sigma=0.0,
                              n_batches=2, batch_size=2)


class TestContainer:
    def test_roundtrip_linear(self, tmp_path):
        inst = gen_regression_instance(nb=30, d=12, k_star=2, c=0.1,
                                       sigma=0.3, seed=22, n_batches=6)
        path = str(tmp_path / "inst.bin")
        save_instance(inst, path)
        back = load_instance(path)
        assert back.kind == inst.kind
        np.testing.assert_array_equal(back.design, inst.design)
        np.testing.assert_array_equal(back.responses, inst.responses)
        np.testing.assert_array_equal(back.truth, inst.truth)
        assert back.n_batches == 6 and back.batch_size == 5
        assert back.spec == inst.spec

    def test_roundtrip_lowrank(self, tmp_path):
        inst = gen_lowrank_instance(d=6, p=5, k_star=2, nb=20, sigma=0.1, seed=23)
        path = str(tmp_path / "lr.bin")
        save_instance(inst, path)
        back = load_instance(path)
        np.testing.assert_array_equal(back.design, inst.design)
        np.testing.assert_array_equal(back.truth, inst.truth)

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_instance(str(path))

    def test_sidecar_required(self, tmp_path):
        inst = gen_regression_instance(nb=10, d=4, k_star=1, c=0.0,
                                       sigma=0.0, seed=24, n_batches=2)
        path = str(tmp_path / "x.bin")
        save_instance(inst, path)
        (tmp_path / "x.bin.json").unlink()
        with pytest.raises(ValueError):
            load_instance(path)

    def test_sidecar_is_sorted_json(self, tmp_path):
        inst = gen_regression_instance(nb=10, d=4, k_star=1, c=0.0,
                                       sigma=0.0, seed=25, n_batches=2)
        path = str(tmp_path / "y.bin")
        save_instance(inst, path)
        text = (tmp_path / "y.bin.json").read_text()
        data = json.loads(text)
        assert json.dumps(data, sort_keys=True, separators=(", ", ": ")) == text.strip()


class TestLibsvm:
    def test_basic_line(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("1 1:0.5 3:2\n")
        design, labels = load_libsvm(str(path), n_features=3)
        np.testing.assert_array_equal(design, [[0.5, 0.0, 2.0]])
        np.testing.assert_array_equal(labels, [1.0])

    def test_empty_feature_list(self, tmp_path):
        path = tmp_path / "b.txt"
        path.write_text("0\n1 2:1.5\n")
        design, labels = load_libsvm(str(path))
        np.testing.assert_array_equal(design, [[0.0, 0.0], [0.0, 1.5]])
        np.testing.assert_array_equal(labels, [0.0, 1.0])

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(26)
        design = rng.standard_normal((20, 7))
        design[rng.random((20, 7)) < 0.3] = 0.0
        labels = rng.integers(0, 2, 20).astype(float)
        path = tmp_path / "c.txt"
        write_libsvm(path, labels, design)
        back_design, back_labels = load_libsvm(str(path), n_features=7)
        np.testing.assert_allclose(back_design, design, atol=1e-12)
        np.testing.assert_array_equal(back_labels, labels)

    def test_zero_index_rejected(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("1 0:2.0\n")
        with pytest.raises(ValueError, match=r"d\.txt:1"):
            load_libsvm(str(path))

    def test_duplicate_index_rejected(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("1 2:1.0 2:3.0\n")
        with pytest.raises(ValueError):
            load_libsvm(str(path))

    def test_bad_label_names_line(self, tmp_path):
        path = tmp_path / "f.txt"
        path.write_text("1 1:1.0\nspam 1:2.0\n")
        with pytest.raises(ValueError, match=r"f\.txt:2"):
            load_libsvm(str(path))

    def test_map_labels(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("-1 1:1.0\n+1 1:2.0\n")
        _, labels = load_libsvm(str(path), map_labels=True)
        np.testing.assert_array_equal(labels, [0.0, 1.0])

    def test_map_labels_rejects_other_values(self, tmp_path):
        path = tmp_path / "h.txt"
        path.write_text("3 1:1.0\n")
        with pytest.raises(ValueError):
            load_libsvm(str(path), map_labels=True)
