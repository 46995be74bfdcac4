import numpy as np
import pytest

from shoplens.ingest import PurchaseMatrix
from shoplens.nmf import (Factorization, HoldoutMask, NmfConfig, fit_nmf,
                          grid_search, imputation_mse, make_holdout_mask,
                          normalize_dictionary, objective_value,
                          top_items_per_element)


def planted(seed, n=30, m=20, rank=3, lo=0.2, hi=1.2):
    rng = np.random.default_rng(seed)
    w = rng.uniform(lo, hi, size=(n, rank))
    h = rng.uniform(lo, hi, size=(rank, m))
    return w @ h


def assert_monotone(trace, slack=1e-10):
    diffs = np.diff(np.asarray(trace))
    assert np.all(diffs <= slack), f"objective increased by {diffs.max()}"


class TestObjective:
    def test_zero_factors(self):
        p = np.array([[1.0, 2.0], [3.0, 4.0]])
        f = Factorization(np.zeros((2, 2)), np.zeros((2, 2)), [], True, 0)
        cfg = NmfConfig(k=2, alpha_m=0.0)
        assert objective_value(p, f, cfg) == pytest.approx(0.5 * (p ** 2).sum())

    def test_exact_factorization_is_zero(self):
        w = np.array([[1.0], [2.0]])
        h = np.array([[3.0, 4.0]])
        f = Factorization(w, h, [], True, 0)
        assert objective_value(w @ h, f, NmfConfig(k=1)) == pytest.approx(0.0)

    def test_hand_computed_two_by_two(self):
        # P=ones, W=H=ones(2x2): WH=2*ones, residual -1 everywhere
        p = np.ones((2, 2))
        f = Factorization(np.ones((2, 2)), np.ones((2, 2)), [], True, 0)
        cfg = NmfConfig(k=2, alpha_m=1.0, l1_ratio=0.5)
        # 0.5*4 + 1*0.5*(4+4) + 0.5*1*0.5*(4+4) = 2 + 4 + 2
        assert objective_value(p, f, cfg) == pytest.approx(8.0)

    def test_masked_entries_drop_out(self):
        p = np.array([[1.0, 5.0], [2.0, 3.0]])
        f = Factorization(np.zeros((2, 1)), np.zeros((1, 2)), [], True, 0)
        mask = HoldoutMask(held_out=((0, 1),), fraction=0.25)
        cfg = NmfConfig(k=1)
        expected = 0.5 * (1.0 + 4.0 + 9.0)  # (0,1) excluded
        assert objective_value(p, f, cfg, mask) == pytest.approx(expected)


class TestFit:
    def test_rank_one_exact_recovery(self):
        u = np.array([1.0, 2.0, 0.5, 3.0])
        v = np.array([2.0, 1.0, 4.0])
        p = np.outer(u, v)
        f = fit_nmf(p, NmfConfig(k=1, seed=0, tol=1e-14, max_iter=2000))
        assert np.linalg.norm(p - f.w @ f.h) < 1e-8
        assert_monotone(f.objective_trace)

    def test_planted_rank3_recovery(self):
        p = planted(1)
        f = fit_nmf(p, NmfConfig(k=3, seed=1, tol=1e-12, max_iter=3000))
        rel = np.linalg.norm(p - f.w @ f.h) / np.linalg.norm(p)
        assert rel < 1e-3
        assert_monotone(f.objective_trace)

    def test_factors_nonnegative(self):
        p = planted(2)
        for alpha_m, l1 in [(0.0, 0.0), (0.5, 0.5), (2.0, 1.0)]:
            f = fit_nmf(p, NmfConfig(k=4, alpha_m=alpha_m, l1_ratio=l1, seed=3))
            assert np.all(f.w >= 0) and np.all(f.h >= 0)
            assert_monotone(f.objective_trace)

    def test_regularization_induces_sparsity(self):
        p = planted(4)
        base = fit_nmf(p, NmfConfig(k=5, alpha_m=0.0, seed=5))
        reg = fit_nmf(p, NmfConfig(k=5, alpha_m=1.0, l1_ratio=0.1, seed=5))
        assert (reg.h == 0).mean() >= (base.h == 0).mean()
        assert reg.converged or reg.n_iter == 500

    def test_negative_input_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            fit_nmf(np.array([[1.0, -0.5]]), NmfConfig(k=1))

    def test_oversized_k_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            fit_nmf(np.ones((3, 4)), NmfConfig(k=4))

    def test_masked_fit_ignores_heldout_values(self):
        p = planted(6)
        mask = make_holdout_mask(p, seed=6)
        f1 = fit_nmf(p, NmfConfig(k=3, seed=7), mask=mask)
        perturbed = p.copy()
        i, j = mask.held_out[0]
        perturbed[i, j] += 100.0
        f2 = fit_nmf(perturbed, NmfConfig(k=3, seed=7), mask=mask)
        assert np.array_equal(f1.w, f2.w)
        assert np.array_equal(f1.h, f2.h)

    def test_masked_fit_objective_monotone(self):
        p = planted(8)
        mask = make_holdout_mask(p, seed=8)
        f = fit_nmf(p, NmfConfig(k=3, alpha_m=0.5, l1_ratio=0.3, seed=8), mask=mask)
        assert_monotone(f.objective_trace)

    def test_trace_matches_objective_value(self):
        p = planted(9)
        cfg = NmfConfig(k=3, alpha_m=0.7, l1_ratio=0.2, seed=9)
        f = fit_nmf(p, cfg)
        assert f.objective_trace[-1] == pytest.approx(
            objective_value(p, f, cfg), rel=1e-12)

    def test_reconstruction_is_sum_of_components(self):
        p = planted(10)
        f = fit_nmf(p, NmfConfig(k=3, seed=10))
        recon = f.w @ f.h
        by_hand = np.zeros_like(recon)
        for t in range(3):
            by_hand += np.outer(f.w[:, t], f.h[t])
        assert np.abs(recon[4] - by_hand[4]).max() < 1e-12

    def test_nndsvd_init_is_deterministic(self):
        p = planted(11)
        f1 = fit_nmf(p, NmfConfig(k=3, seed=0, init="nndsvd", max_iter=50))
        f2 = fit_nmf(p, NmfConfig(k=3, seed=99, init="nndsvd", max_iter=50))
        assert np.array_equal(f1.w, f2.w)  # seed does not enter nndsvd

    def test_purchase_matrix_input_keeps_ids(self):
        m = PurchaseMatrix(["a", "b"], ["x", "y"],
                           {(0, 0): 1.0, (0, 1): 2.0, (1, 0): 3.0, (1, 1): 1.5})
        f = fit_nmf(m, NmfConfig(k=1, seed=0))
        assert f.row_ids == ["a", "b"]
        assert f.col_ids == ["x", "y"]

    def test_full_rank_beats_clipped_svd_baseline(self):
        for seed in (12, 13):
            rng = np.random.default_rng(seed)
            p = rng.uniform(0.1, 2.0, size=(8, 5))
            k = 5
            f = fit_nmf(p, NmfConfig(k=k, seed=seed, tol=1e-14, max_iter=5000))
            u, s, vt = np.linalg.svd(p, full_matrices=False)
            approx = np.clip(u[:, :k] * s[:k] @ vt[:k], 0.0, None)
            baseline = 0.5 * ((p - approx) ** 2).sum()
            fit_err = 0.5 * ((p - f.w @ f.h) ** 2).sum()
            assert fit_err <= 1.05 * baseline + 1e-8 * (p ** 2).sum()


class TestImputation:
    def test_exact_factorization_zero_error(self):
        w = np.array([[1.0], [2.0]])
        h = np.array([[3.0, 4.0]])
        f = Factorization(w, h, [], True, 0)
        mask = HoldoutMask(held_out=((0, 0), (1, 1)), fraction=0.5)
        assert imputation_mse(w @ h, f, mask) == pytest.approx(0.0)

    def test_single_entry_squared_error(self):
        p = np.array([[4.0]])
        f = Factorization(np.array([[1.0]]), np.array([[3.0]]), [], True, 0)
        mask = HoldoutMask(held_out=((0, 0),), fraction=1.0)
        assert imputation_mse(p, f, mask) == pytest.approx(1.0)

    def test_right_rank_beats_rank_one(self):
        p = planted(14)
        mask = make_holdout_mask(p, seed=14)
        f3 = fit_nmf(p, NmfConfig(k=3, seed=14), mask=mask)
        f1 = fit_nmf(p, NmfConfig(k=1, seed=14), mask=mask)
        assert imputation_mse(p, f3, mask) < imputation_mse(p, f1, mask)

    def test_empty_mask_rejected(self):
        f = Factorization(np.ones((1, 1)), np.ones((1, 1)), [], True, 0)
        with pytest.raises(ValueError, match="empty"):
            imputation_mse(np.ones((1, 1)), f, HoldoutMask(held_out=(), fraction=0.0))

    def test_mask_samples_only_stored_entries(self):
        p = np.array([[1.0, 0.0], [0.0, 2.0]])
        mask = make_holdout_mask(p, fraction=1.0, seed=0)
        assert set(mask.held_out) == {(0, 0), (1, 1)}


class TestGridSearch:
    def test_single_cell(self):
        p = planted(15)
        result = grid_search(p, [3], [0.5], [0.1], seed=15)
        assert result.best.k == 3
        assert result.best.alpha_m == 0.5
        assert result.best.l1_ratio == 0.1
        assert len(result.table) == 1

    def test_planted_rank4_selected(self):
        # mild observation noise gives the imputation curve its U shape
        rng = np.random.default_rng(16)
        p = planted(16, rank=4) + 0.05 * rng.standard_normal((30, 20))
        p = np.clip(p, 0.0, None)
        result = grid_search(p, range(2, 9), [0.0], [0.0], seed=16)
        assert result.best.k == 4

    def test_failed_cells_recorded_not_fatal(self):
        p = planted(17, n=6, m=5)
        result = grid_search(p, [2, 50], [0.0], [0.0], seed=17)
        assert len(result.failures) == 1
        assert result.failures[0][0] == 50
        assert result.best.k == 2
        nan_rows = [row for row in result.table if np.isnan(row[3])]
        assert len(nan_rows) == 1

    def test_shared_mask_across_cells(self):
        p = planted(18)
        r1 = grid_search(p, [2, 3], [0.0], [0.0], seed=18)
        r2 = grid_search(p, [2, 3], [0.0], [0.0], seed=18)
        assert r1.table == r2.table


class TestDictionary:
    def test_three_four_five_row(self):
        f = Factorization(np.ones((1, 1)), np.array([[3.0, 4.0]]), [], True, 0)
        h_norm, scales, zero_rows = normalize_dictionary(f)
        assert h_norm.tolist() == [[0.6, 0.8]]
        assert scales.tolist() == [5.0]
        assert zero_rows == []

    def test_unit_row_unchanged(self):
        f = Factorization(np.ones((1, 1)), np.array([[1.0, 0.0]]), [], True, 0)
        h_norm, scales, _ = normalize_dictionary(f)
        assert h_norm.tolist() == [[1.0, 0.0]]
        assert scales.tolist() == [1.0]

    def test_scales_preserve_product(self):
        rng = np.random.default_rng(19)
        w = rng.uniform(0, 2, size=(6, 3))
        h = rng.uniform(0, 2, size=(3, 5))
        f = Factorization(w, h, [], True, 0)
        h_norm, scales, _ = normalize_dictionary(f)
        w_scaled = w * scales[None, :]
        assert np.abs(w_scaled @ h_norm - w @ h).max() <= 1e-10

    def test_zero_row_reported(self):
        f = Factorization(np.ones((1, 2)), np.array([[0.0, 0.0], [1.0, 1.0]]),
                          [], True, 0)
        h_norm, scales, zero_rows = normalize_dictionary(f)
        assert zero_rows == [0]
        assert scales[0] == 1.0
        assert h_norm[0].tolist() == [0.0, 0.0]

    def test_top_items_one_hot(self):
        top = top_items_per_element(np.array([[0.0, 1.0, 0.0]]), top_n=1,
                                    col_ids=["a", "b", "c"])
        assert top == [[("b", 1.0)]]

    def test_top_items_hand_sorted(self):
        # weights (0.1, 0.9, 0.42) for items 1..3: top two are items 2 then 3
        top = top_items_per_element(np.array([[0.1, 0.9, 0.42]]), top_n=2,
                                    col_ids=["1", "2", "3"])
        assert [c for c, _ in top[0]] == ["2", "3"]

    def test_top_n_validated(self):
        with pytest.raises(ValueError, match="top_n"):
            top_items_per_element(np.ones((1, 2)), top_n=0)
