"""Kernel-layer checks: eigendecomposition, PSD square root,
pseudo-inverse, the compact taper and Gaussian sampling."""
import numpy as np
import pytest

from lenkf.numkit import (IndefiniteMatrixError, NonSymmetricMatrixError,
                          gaspari_cohn, pinv, sample_gaussian, sqrtm_psd, sym_eig)


class TestSymEig:
    def test_identity(self):
        fac = sym_eig(np.eye(3))
        np.testing.assert_allclose(fac.eigenvalues, np.ones(3))

    def test_diagonal_sorted_descending(self):
        fac = sym_eig(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(fac.eigenvalues, [9.0, 4.0])
        # axis-aligned eigenvectors
        np.testing.assert_allclose(np.abs(fac.eigenvectors), [[0, 1], [1, 0]], atol=1e-14)

    def test_reconstruction_random(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((10, 10))
        a = 0.5 * (a + a.T)
        fac = sym_eig(a)
        err = np.linalg.norm(fac.reconstruct() - a) / np.linalg.norm(a)
        assert err <= 1e-10
        # orthonormal eigenvectors
        g = fac.eigenvectors
        np.testing.assert_allclose(g.T @ g, np.eye(10), atol=1e-10)

    def test_rejects_non_symmetric(self):
        with pytest.raises(NonSymmetricMatrixError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_apply_matches_dense(self):
        rng = np.random.default_rng(8)
        m = rng.standard_normal((6, 6))
        a = m @ m.T + np.eye(6)
        fac = sym_eig(a)
        rhs = rng.standard_normal((6, 3))
        np.testing.assert_allclose(fac.apply(lambda d: 1 / d, rhs),
                                   np.linalg.solve(a, rhs), atol=1e-10)


class TestSqrtmPsd:
    def test_identity(self):
        np.testing.assert_allclose(sqrtm_psd(np.eye(4)), np.eye(4), atol=1e-12)

    def test_diagonal(self):
        np.testing.assert_allclose(sqrtm_psd(np.diag([4.0, 9.0])),
                                   np.diag([2.0, 3.0]), atol=1e-12)

    @pytest.mark.parametrize("n", [5, 40, 400])
    def test_square_of_root_recovers_matrix(self, n):
        rng = np.random.default_rng(n)
        m = rng.standard_normal((n, n))
        a = m @ m.T
        root = sqrtm_psd(a)
        np.testing.assert_allclose(root, root.T)
        err = np.linalg.norm(root @ root - a) / np.linalg.norm(a)
        assert err <= 1e-9

    def test_rejects_indefinite(self):
        with pytest.raises(IndefiniteMatrixError):
            sqrtm_psd(np.diag([1.0, -0.5]))

    def test_clamps_roundoff_negatives(self):
        a = np.diag([1.0, -1e-12])
        root = sqrtm_psd(a)
        assert root[1, 1] == 0.0


def _check_moore_penrose(a, a_pinv, tol=1e-8):
    scale = max(1.0, np.linalg.norm(a))
    assert np.linalg.norm(a @ a_pinv @ a - a) <= tol * scale
    assert np.linalg.norm(a_pinv @ a @ a_pinv - a_pinv) <= tol * scale
    assert np.linalg.norm((a @ a_pinv).T - a @ a_pinv) <= tol * scale
    assert np.linalg.norm((a_pinv @ a).T - a_pinv @ a) <= tol * scale


class TestPinv:
    def test_invertible_two_by_two(self):
        a = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(pinv(a), np.linalg.inv(a), atol=1e-12)

    def test_zero_matrix(self):
        np.testing.assert_allclose(pinv(np.zeros((3, 2))), np.zeros((2, 3)))

    def test_rank_one_rectangular(self):
        a = np.outer([1.0, 2.0, 3.0], [4.0, 5.0])
        _check_moore_penrose(a, pinv(a))

    @pytest.mark.parametrize("seed", range(5))
    def test_random_rank_deficient(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((7, 3)) @ rng.standard_normal((3, 6))
        _check_moore_penrose(a, pinv(a))

    def test_rejects_negative_tol(self):
        with pytest.raises(ValueError):
            pinv(np.eye(2), tol=-1.0)


class TestGaspariCohn:
    def test_at_origin(self):
        assert gaspari_cohn(0.0) == 1.0

    def test_beyond_support(self):
        assert gaspari_cohn(2.0) == 0.0
        assert gaspari_cohn(2.5) == 0.0

    def test_value_at_knot(self):
        # first-branch polynomial at 1: 1 - 5/3 + 5/8 + 1/2 - 1/4 = 5/24
        assert abs(gaspari_cohn(1.0) - 5.0 / 24.0) < 1e-14

    def test_branches_continuous_at_knot(self):
        assert abs(gaspari_cohn(1.0 - 1e-9) - gaspari_cohn(1.0 + 1e-9)) < 1e-7

    def test_monotone_and_bounded(self):
        x = np.linspace(0.0, 2.0, 1001)
        vals = gaspari_cohn(x)
        assert np.all(np.diff(vals) <= 1e-14)
        assert np.all(vals >= 0.0) and np.all(vals <= 1.0)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            gaspari_cohn(-0.1)

    def test_array_shape(self):
        out = gaspari_cohn(np.array([[0.0, 1.0], [2.0, 3.0]]))
        assert out.shape == (2, 2)


class TestSampleGaussian:
    def test_zero_std_returns_mean(self):
        mean = np.array([1.0, -2.0, 3.0])
        out = sample_gaussian(mean, np.zeros(3), np.random.default_rng(0))
        np.testing.assert_array_equal(out, mean)

    def test_deterministic_replay(self):
        mean = np.zeros(5)
        std = np.ones(5)
        a = sample_gaussian(mean, std, np.random.default_rng(42))
        b = sample_gaussian(mean, std, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_monte_carlo_moments(self):
        rng = np.random.default_rng(3)
        draws = np.array([sample_gaussian(np.zeros(1), np.ones(1), rng)[0]
                          for _ in range(100_000)])
        assert abs(draws.mean()) < 0.02
        assert abs(draws.std() - 1.0) < 0.02

    def test_rejects_negative_std(self):
        with pytest.raises(ValueError):
            sample_gaussian(np.zeros(2), np.array([1.0, -1.0]),
                            np.random.default_rng(0))
