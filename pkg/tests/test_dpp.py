"""Kernel math and fixed-size sampler tests.

Exact values come from closed forms or brute-force enumeration over subsets;
numpy.linalg serves as the independent oracle for the eigendecomposition.
"""

from itertools import combinations

import numpy as np
import pytest

from divher import dpp


def random_features(rng, dim, n):
    return rng.normal(size=(dim, n))


def enumerate_kdpp_probs(kernel, k):
    n = kernel.shape[0]
    return {
        sub: dpp.kdpp_subset_probability(kernel, sub)
        for sub in combinations(range(n), k)
    }


class TestNormalizeColumns:
    def test_scales_to_unit_norm(self):
        out = dpp.normalize_columns(np.array([[3.0], [4.0]]))
        np.testing.assert_allclose(out[:, 0], [0.6, 0.8])

    def test_zero_column_stays_zero(self):
        out = dpp.normalize_columns(np.array([[0.0, 1.0], [0.0, 0.0]]))
        np.testing.assert_array_equal(out[:, 0], [0.0, 0.0])
        np.testing.assert_array_equal(out[:, 1], [1.0, 0.0])

    def test_unit_column_unchanged(self):
        out = dpp.normalize_columns(np.array([[1.0], [0.0]]))
        np.testing.assert_allclose(out[:, 0], [1.0, 0.0])

    def test_all_columns_unit_norm(self):
        rng = np.random.default_rng(0)
        out = dpp.normalize_columns(random_features(rng, 5, 12))
        np.testing.assert_allclose(np.linalg.norm(out, axis=0), np.ones(12))


class TestGramKernel:
    def test_single_unit_column(self):
        np.testing.assert_allclose(
            dpp.gram_kernel(np.array([[1.0], [0.0]])), [[1.0]]
        )

    def test_orthogonal_columns_give_identity(self):
        m = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(dpp.gram_kernel(m), np.eye(2))

    def test_duplicate_columns(self):
        m = np.array([[1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(dpp.gram_kernel(m), np.ones((2, 2)))

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            k = dpp.gram_kernel(dpp.normalize_columns(random_features(rng, 4, 7)))
            assert np.max(np.abs(k - k.T)) <= 1e-10
            assert np.linalg.eigvalsh(k).min() >= -1e-8


class TestDetPsd:
    def test_identity(self):
        assert dpp.det_psd(np.eye(2)) == 1.0

    def test_rank_deficient_is_zero(self):
        assert dpp.det_psd(np.ones((2, 2))) == 0.0

    def test_sixty_degree_gram(self):
        # det of the Gram of two unit vectors at 60 degrees is sin^2(60).
        c = 0.5
        kernel = np.array([[1.0, c], [c, 1.0]])
        assert abs(dpp.det_psd(kernel) - 0.75) < 1e-12

    def test_matches_numpy_det(self):
        rng = np.random.default_rng(2)
        for n in (1, 2, 3, 5, 8):
            a = rng.normal(size=(n, n))
            kernel = a @ a.T
            expected = np.linalg.det(kernel)
            assert abs(dpp.det_psd(kernel) - expected) <= 1e-8 * max(1.0, abs(expected))

    def test_duplicate_feature_columns_give_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = random_features(rng, 3, 4)
            m[:, 2] = m[:, 0]
            kernel = dpp.gram_kernel(dpp.normalize_columns(m))
            assert dpp.det_psd(kernel) == 0.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(5, 5))
        kernel = a @ a.T
        base = dpp.det_psd(kernel)
        for _ in range(5):
            perm = rng.permutation(5)
            permuted = kernel[np.ix_(perm, perm)]
            assert abs(dpp.det_psd(permuted) - base) <= 1e-9 * max(1.0, abs(base))

    def test_eigen_route_matches_direct(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(4, 4))
        kernel = a @ a.T
        eigen = dpp.sym_eigen(kernel)
        direct = dpp.det_psd(kernel)
        via_eigen = dpp.det_psd(kernel, eigen=eigen)
        assert abs(direct - via_eigen) <= 1e-8 * max(1.0, abs(direct))


class TestSymEigen:
    def test_identity(self):
        es = dpp.sym_eigen(np.eye(3))
        np.testing.assert_allclose(es.eigenvalues, [1.0, 1.0, 1.0])

    def test_rank_one_kernel(self):
        es = dpp.sym_eigen(np.ones((2, 2)))
        np.testing.assert_allclose(es.eigenvalues, [0.0, 2.0], atol=1e-12)

    def test_diagonal(self):
        es = dpp.sym_eigen(np.diag([2.0, 5.0]))
        np.testing.assert_allclose(es.eigenvalues, [2.0, 5.0])
        np.testing.assert_allclose(np.abs(es.eigenvectors), np.eye(2), atol=1e-12)

    def test_against_numpy_on_random_psd(self):
        rng = np.random.default_rng(6)
        for n in (2, 3, 7, 20, 60):
            a = rng.normal(size=(n, n))
            kernel = a @ a.T
            es = dpp.sym_eigen(kernel)
            expected = np.linalg.eigvalsh(kernel)
            expected[expected < dpp.EIGENVALUE_CLAMP] = 0.0
            np.testing.assert_allclose(
                es.eigenvalues, expected, atol=1e-8 * max(1.0, abs(expected).max())
            )

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(10, 10))
        kernel = a @ a.T
        es = dpp.sym_eigen(kernel)
        recon = es.eigenvectors @ np.diag(es.eigenvalues) @ es.eigenvectors.T
        assert np.max(np.abs(recon - kernel)) <= 1e-8 * max(1.0, np.abs(kernel).max())
        gram = es.eigenvectors.T @ es.eigenvectors
        assert np.max(np.abs(gram - np.eye(10))) <= 1e-8

    def test_eigenvalues_sorted_ascending_and_clamped(self):
        rng = np.random.default_rng(8)
        m = dpp.normalize_columns(random_features(rng, 2, 5))
        es = dpp.sym_eigen(dpp.gram_kernel(m))  # rank <= 2: zeros present
        assert (np.diff(es.eigenvalues) >= 0).all()
        assert (es.eigenvalues[es.eigenvalues < dpp.EIGENVALUE_CLAMP] == 0.0).all()

    def test_asymmetric_input_rejected(self):
        with pytest.raises(ValueError, match="asymmetric"):
            dpp.sym_eigen(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_strongly_indefinite_input_rejected(self):
        with pytest.raises(ValueError, match="positive semi-definite"):
            dpp.sym_eigen(np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestEskTable:
    def test_counting_case(self):
        table = dpp.esk_table(np.ones(3), 2)
        assert table[2, 3] == 3.0

    def test_sum_and_product(self):
        table = dpp.esk_table(np.array([2.0, 3.0]), 2)
        assert table[1, 2] == 5.0
        assert table[2, 2] == 6.0

    def test_pair_enumeration(self):
        table = dpp.esk_table(np.array([0.5, 1.0, 2.0]), 2)
        assert abs(table[2, 3] - 3.5) < 1e-14

    def test_first_row_ones_and_upper_triangle_zero(self):
        rng = np.random.default_rng(9)
        lam = rng.uniform(0, 2, size=6)
        table = dpp.esk_table(lam, 4)
        np.testing.assert_array_equal(table[0], np.ones(7))
        for j in range(1, 5):
            for i in range(j):
                assert table[j, i] == 0.0

    def test_recurrence_holds_exactly(self):
        rng = np.random.default_rng(10)
        lam = rng.uniform(0, 3, size=8)
        table = dpp.esk_table(lam, 5)
        for j in range(1, 6):
            for i in range(1, 9):
                assert table[j, i] == table[j, i - 1] + lam[i - 1] * table[j - 1, i - 1]

    def test_degree_one_and_full_degree(self):
        rng = np.random.default_rng(11)
        lam = rng.uniform(0.1, 2.0, size=7)
        top = dpp.esk_table(lam, 1)[1, 7]
        assert top == np.cumsum(lam)[-1]  # identical accumulation order
        full = dpp.esk_table(lam, 7)[7, 7]
        assert abs(full - np.prod(lam)) <= 1e-10 * abs(np.prod(lam))

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(12)
        lam = rng.uniform(0, 2, size=6)
        table = dpp.esk_table(lam, 3)
        for k in (1, 2, 3):
            brute = sum(np.prod(lam[list(sub)]) for sub in combinations(range(6), k))
            assert abs(table[k, 6] - brute) <= 1e-12 * max(1.0, brute)

    def test_rejects_negative_eigenvalues(self):
        with pytest.raises(ValueError, match="nonnegative"):
            dpp.esk_table(np.array([1.0, -0.5]), 1)


class TestSubsetProbabilities:
    def test_one_by_one_closed_form(self):
        kernel = np.array([[1.0]])
        assert abs(dpp.dpp_subset_probability(kernel, []) - 0.5) < 1e-12
        assert abs(dpp.dpp_subset_probability(kernel, [0]) - 0.5) < 1e-12

    def test_identity_two_items(self):
        assert abs(dpp.dpp_subset_probability(np.eye(2), [0, 1]) - 0.25) < 1e-12

    def test_all_subsets_sum_to_one(self):
        rng = np.random.default_rng(13)
        for n in (2, 4, 6):
            a = rng.normal(size=(n, n))
            kernel = a @ a.T / n
            total = sum(
                dpp.dpp_subset_probability(kernel, sub)
                for size in range(n + 1)
                for sub in combinations(range(n), size)
            )
            assert abs(total - 1.0) <= 1e-8

    def test_kdpp_identity_three_choose_two(self):
        probs = enumerate_kdpp_probs(np.eye(3), 2)
        for p in probs.values():
            assert abs(p - 1.0 / 3.0) < 1e-12

    def test_kdpp_duplicate_items(self):
        m = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        kernel = dpp.gram_kernel(dpp.normalize_columns(m))
        assert dpp.kdpp_subset_probability(kernel, [0, 1]) == 0.0
        assert abs(dpp.kdpp_subset_probability(kernel, [0, 2]) - 0.5) < 1e-12
        assert abs(dpp.kdpp_subset_probability(kernel, [1, 2]) - 0.5) < 1e-12

    def test_kdpp_sums_to_one(self):
        rng = np.random.default_rng(14)
        for n, k in ((4, 2), (6, 3), (7, 2)):
            a = rng.normal(size=(n, n))
            kernel = a @ a.T / n
            total = sum(enumerate_kdpp_probs(kernel, k).values())
            assert abs(total - 1.0) <= 1e-8

    def test_insufficient_rank_raises(self):
        m = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        kernel = dpp.gram_kernel(dpp.normalize_columns(m))
        with pytest.raises(dpp.KernelRankError):
            dpp.kdpp_subset_probability(kernel, [0, 1])


class TestKdppSample:
    def test_full_size_draw_returns_everything(self):
        rng = np.random.default_rng(15)
        m = random_features(rng, 6, 4)
        for seed in range(5):
            out = dpp.kdpp_sample(m, 4, np.random.default_rng(seed))
            np.testing.assert_array_equal(out, [0, 1, 2, 3])

    def test_two_identical_items_split_evenly(self):
        m = np.array([[1.0, 1.0], [0.0, 0.0]])
        rng = np.random.default_rng(16)
        counts = np.zeros(2)
        for _ in range(10_000):
            counts[dpp.kdpp_sample(m, 1, rng)[0]] += 1
        freqs = counts / 10_000
        assert abs(freqs[0] - 0.5) <= 0.02
        assert abs(freqs[1] - 0.5) <= 0.02

    def test_duplicate_pair_never_sampled_together(self):
        m = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        rng = np.random.default_rng(17)
        counts = {}
        for _ in range(10_000):
            key = tuple(dpp.kdpp_sample(m, 2, rng))
            counts[key] = counts.get(key, 0) + 1
        assert (0, 1) not in counts
        assert abs(counts[(0, 2)] / 10_000 - 0.5) <= 0.02
        assert abs(counts[(1, 2)] / 10_000 - 0.5) <= 0.02

    def test_deterministic_under_fixed_seed(self):
        rng = np.random.default_rng(18)
        m = random_features(rng, 4, 9)
        a = dpp.kdpp_sample(m, 3, np.random.default_rng(99))
        b = dpp.kdpp_sample(m, 3, np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_returns_k_distinct_indices(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            n = int(rng.integers(2, 10))
            k = int(rng.integers(1, n + 1))
            m = random_features(rng, int(rng.integers(1, 5)), n)
            out = dpp.kdpp_sample(m, k, rng)
            assert len(out) == k
            assert len(set(out.tolist())) == k
            assert all(0 <= i < n for i in out)

    def test_rank_deficient_fallback_counts_and_fills(self):
        m = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]])  # rank 1
        stats = dpp.SamplerStats()
        out = dpp.kdpp_sample(m, 3, np.random.default_rng(20), stats=stats)
        assert len(out) == 3 and len(set(out.tolist())) == 3
        assert stats.fallbacks == 1

    def test_zero_feature_matrix_falls_back_uniform(self):
        m = np.zeros((3, 5))
        stats = dpp.SamplerStats()
        out = dpp.kdpp_sample(m, 2, np.random.default_rng(21), stats=stats)
        assert len(out) == 2 and stats.fallbacks == 1

    def test_invalid_k_rejected(self):
        m = np.eye(3)
        with pytest.raises(ValueError):
            dpp.kdpp_sample(m, 0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            dpp.kdpp_sample(m, 4, np.random.default_rng(0))

    def test_empirical_matches_exact_distribution(self):
        # Smoke-scale version of the exact-distribution check; the acceptance
        # suite runs the full 20-kernel sweep.
        rng = np.random.default_rng(22)
        m = random_features(rng, 3, 6)
        kernel = dpp.gram_kernel(dpp.normalize_columns(m))
        exact = enumerate_kdpp_probs(kernel, 2)
        draws = 20_000
        counts = {}
        srng = np.random.default_rng(23)
        for _ in range(draws):
            key = tuple(int(i) for i in dpp.kdpp_sample(m, 2, srng))
            counts[key] = counts.get(key, 0) + 1
        tv = 0.5 * sum(
            abs(exact.get(s, 0.0) - counts.get(s, 0) / draws)
            for s in set(exact) | set(counts)
        )
        assert tv <= 0.02


class TestPhaseTwoBasisUpdate:
    def test_retained_vectors_orthogonal_to_coordinate(self):
        rng = np.random.default_rng(24)
        for trial in range(20):
            n = int(rng.integers(3, 10))
            r = int(rng.integers(2, n + 1))
            basis = np.linalg.qr(rng.normal(size=(n, r)))[0]
            item = int(rng.integers(n))
            shrunk = dpp._orthogonal_to_item(np.ascontiguousarray(basis), item)
            if np.linalg.norm(basis[item]) < 1e-12:
                continue
            assert shrunk.shape[1] == r - 1
            assert np.max(np.abs(shrunk[item, :])) <= 1e-8 if r > 1 else True
            gram = shrunk.T @ shrunk
            assert np.max(np.abs(gram - np.eye(r - 1))) <= 1e-8

    def test_vectors_stay_in_original_span(self):
        rng = np.random.default_rng(25)
        basis = np.linalg.qr(rng.normal(size=(7, 4)))[0]
        shrunk = dpp._orthogonal_to_item(np.ascontiguousarray(basis), 2)
        projector = basis @ basis.T
        np.testing.assert_allclose(projector @ shrunk, shrunk, atol=1e-10)

    def test_jit_and_numpy_twins_agree_on_subspace(self):
        rng = np.random.default_rng(26)
        basis = np.linalg.qr(rng.normal(size=(8, 5)))[0]
        for item in range(8):
            a = dpp._orthogonal_to_item(np.ascontiguousarray(basis), item)
            b = dpp._orthogonal_to_item_numpy(basis, item)
            assert a.shape == b.shape
            # Same subspace: cross-Gram must be orthogonal.
            cross = a.T @ b
            np.testing.assert_allclose(
                cross @ cross.T, np.eye(a.shape[1]), atol=1e-10
            )


def test_single_column_sampler_trivial():
    out = dpp.kdpp_sample(np.array([[2.0], [1.0]]), 1, np.random.default_rng(0))
    np.testing.assert_array_equal(out, [0])
