import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lipcert as lc
from lipcert.errors import NonFiniteError, NotPositiveDefiniteError, NotPsdError
from lipcert.spectral import SymMatrix, default_pd_tol


def rand_spd(n, seed, shift=0.1):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    return G @ G.T + shift * np.eye(n)


class TestSpectralNorm:
    def test_diagonal(self):
        assert lc.spectral_norm(np.diag([3.0, 4.0])) == pytest.approx(4.0, rel=1e-12)

    def test_zero_matrix(self):
        assert lc.spectral_norm(np.zeros((5, 5))) == 0.0

    def test_rectangular_against_eig_oracle(self):
        # Oracle: full symmetric eigendecomposition of A^T A (LAPACK).
        rng = np.random.default_rng(42)
        A = rng.standard_normal((6, 4))
        expected = math.sqrt(np.linalg.eigvalsh(A.T @ A)[-1])
        assert lc.spectral_norm(A) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("shape", [(3, 3), (10, 4), (4, 10), (40, 40), (90, 60)])
    def test_against_svd_oracle(self, seed, shape):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal(shape)
        expected = np.linalg.svd(A, compute_uv=False)[0]
        assert lc.spectral_norm(A) == pytest.approx(expected, rel=1e-10)

    def test_transpose_invariance(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((7, 12))
        assert lc.spectral_norm(A) == pytest.approx(
            lc.spectral_norm(A.T), rel=1e-12
        )

    def test_exact_nondominant_eigenvector_start(self):
        # The all-ones vector is an exact eigenvector for the small
        # eigenvalue here; a plain power iteration would accept it.
        a = (1 + math.sqrt(3)) / 2
        b = (1 - math.sqrt(3)) / 2
        W = np.array([[a, b], [b, a]])
        assert lc.spectral_norm(W) == pytest.approx(math.sqrt(3), rel=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            lc.spectral_norm(np.array([[1.0, np.nan]]))

    def test_1x1(self):
        assert lc.spectral_norm(np.array([[-2.5]])) == pytest.approx(2.5)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
    def test_scaling_covariance(self, seed, s):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((5, 3))
        assert lc.spectral_norm(s * A) == pytest.approx(
            s * lc.spectral_norm(A), rel=1e-10
        )


class TestSymEig:
    def test_identity(self):
        w, V = lc.sym_eig(np.eye(3))
        assert np.allclose(w, [1.0, 1.0, 1.0])
        assert np.allclose(V.T @ V, np.eye(3), atol=1e-12)

    def test_diag_indefinite(self):
        w, _ = lc.sym_eig(np.diag([-1.0, 2.0]))
        assert np.allclose(w, [-1.0, 2.0])

    @pytest.mark.parametrize("n,seed", [(2, 0), (8, 1), (8, 2), (25, 3), (60, 4)])
    def test_reconstruction(self, n, seed):
        S = rand_spd(n, seed)
        w, V = lc.sym_eig(S)
        assert np.all(np.diff(w) >= 0)  # ascending
        assert np.linalg.norm(S @ V - V @ np.diag(w)) <= 1e-9 * np.linalg.norm(S)
        assert np.max(np.abs(V.T @ V - np.eye(n))) <= 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_against_lapack_oracle(self, seed):
        rng = np.random.default_rng(seed)
        S = rng.standard_normal((12, 12))
        S = (S + S.T) / 2
        w, _ = lc.sym_eig(S)
        scale = max(np.max(np.abs(w)), 1.0)
        assert np.max(np.abs(w - np.linalg.eigvalsh(S))) <= 1e-12 * scale

    def test_repeated_eigenvalues(self):
        # Projection-like spectrum: eigenvalues {0, 0, 1, 1, 1}.
        rng = np.random.default_rng(9)
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        S = Q[:, :3] @ Q[:, :3].T
        w, V = lc.sym_eig(S)
        assert np.allclose(np.sort(w), [0, 0, 1, 1, 1], atol=1e-12)
        assert np.linalg.norm(S @ V - V @ np.diag(w)) <= 1e-9 * np.linalg.norm(S)


class TestCheckPd:
    def test_identity(self):
        report = lc.check_pd(np.eye(4), tol=0.0)
        assert report.is_pd and report.method == "cholesky"
        assert report.min_eig == pytest.approx(1.0, rel=1e-9)

    def test_near_singular_negative(self):
        report = lc.check_pd(np.diag([1.0, -1e-3]), tol=0.0)
        assert not report.is_pd
        assert report.min_eig == pytest.approx(-1e-3, rel=1e-9)
        assert report.method == "eig"

    def test_consistency_invariant(self):
        for seed in range(6):
            S = rand_spd(5, seed, shift=1e-6)
            tol = default_pd_tol(S)
            report = lc.check_pd(S, tol)
            assert report.is_pd == (report.min_eig > tol)

    def test_first_stage_identity_recursion(self):
        # Identity weights: the first cascade matrix is the identity.
        net = lc.from_weights([np.eye(3), np.eye(3)])
        state = lc.CascadeState.initial(3)
        F = lc.next_F(net.layers[0].W, state)
        M = lc.next_M(np.full(3, 2.0), F)
        report = lc.check_pd(M)
        assert report.is_pd
        assert np.allclose(M.a, np.eye(3))


class TestSolveSpd:
    def test_identity(self):
        B = np.arange(12.0).reshape(4, 3)
        assert np.allclose(lc.solve_spd(np.eye(4), B), B)

    def test_diagonal(self):
        X = lc.solve_spd(np.diag([2.0, 4.0]), np.eye(2))
        assert np.allclose(X, np.diag([0.5, 0.25]))

    def test_residual_oracle(self):
        M = rand_spd(10, 7)
        rng = np.random.default_rng(8)
        B = rng.standard_normal((10, 6))
        X = lc.solve_spd(M, B)
        assert np.linalg.norm(M @ X - B) <= 1e-9 * np.linalg.norm(B)

    def test_not_pd(self):
        with pytest.raises(NotPositiveDefiniteError):
            lc.solve_spd(np.diag([1.0, -1.0]), np.eye(2))


class TestSymSqrtPsd:
    def test_diagonal(self):
        R = lc.sym_sqrt_psd(np.diag([4.0, 9.0]))
        assert np.allclose(R.a, np.diag([2.0, 3.0]))

    def test_identity(self):
        assert np.allclose(lc.sym_sqrt_psd(np.eye(3)).a, np.eye(3))

    @pytest.mark.parametrize("seed", range(4))
    def test_reconstruction(self, seed):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((7, 4))
        S = G @ G.T  # PSD, rank-deficient
        R = lc.sym_sqrt_psd(S)
        assert np.linalg.norm(R.a @ R.a - S) <= 1e-8 * np.linalg.norm(S)
        assert np.min(np.linalg.eigvalsh(R.a)) >= -1e-12

    def test_commutes_with_input(self):
        S = rand_spd(6, 11)
        R = lc.sym_sqrt_psd(S).a
        assert np.linalg.norm(R @ S - S @ R) <= 1e-8 * np.linalg.norm(S)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPsdError):
            lc.sym_sqrt_psd(np.diag([1.0, -0.5]))


class TestProperties:
    @pytest.mark.parametrize("seed", range(10))
    def test_nonzero_eigenvalue_sharing(self, seed):
        # The two orderings of the weighted Gram product share their
        # nonzero spectra (checked against the LAPACK general solver).
        rng = np.random.default_rng(seed)
        d, k = 5, 3
        W = rng.standard_normal((d, k))
        M = rand_spd(k, seed + 100)
        Minv = np.linalg.inv(M)
        e1 = np.linalg.eigvals(W.T @ W @ Minv)
        e2 = np.linalg.eigvals(W @ Minv @ W.T)
        scale = np.max(np.abs(e2))
        big1 = np.sort(e1[np.abs(e1) > 1e-10 * scale].real)
        big2 = np.sort(e2[np.abs(e2) > 1e-10 * scale].real)
        assert big1.shape == big2.shape
        assert np.allclose(big1, big2, rtol=1e-8)

    @pytest.mark.parametrize("seed", range(6))
    def test_inverse_norm_is_reciprocal_min_eig(self, seed):
        M = rand_spd(6, seed, shift=0.5)
        Minv = np.linalg.inv(M)
        min_eig = lc.min_eig_sym(M)
        assert lc.spectral_norm(Minv) == pytest.approx(1.0 / min_eig, rel=1e-10)

    def test_symmetrization_at_construction(self):
        A = np.array([[1.0, 2.0], [0.0, 3.0]])
        S = SymMatrix(A)
        assert np.array_equal(S.a, S.a.T)
        assert S.a[0, 1] == 1.0
        with pytest.raises(ValueError):
            S.a[0, 0] = 99.0  # read-only storage

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_sqrt_squares_back(self, seed):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((5, 5))
        S = G @ G.T
        R = lc.sym_sqrt_psd(S)
        assert np.linalg.norm(R.a @ R.a - S) <= 1e-8 * max(np.linalg.norm(S), 1e-30)
