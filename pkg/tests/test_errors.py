import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from lsksvd.errors import (
    approximation_errors,
    correlation_matrix,
    fidelity_fields,
    identity_correlation,
    mahalanobis_diag,
    split_patch_penalty,
)
from lsksvd.imaging import extract_patch
from lsksvd.sparse import Dictionary, omp


def unit_columns(rng, k, K):
    D = rng.standard_normal((k, K))
    return D / np.linalg.norm(D, axis=0)


class TestApproximationErrors:
    def test_exact_reconstruction(self, rng):
        D = unit_columns(rng, 5, 8)
        A = rng.standard_normal((8, 4))
        np.testing.assert_allclose(approximation_errors(D @ A, D, A), 0.0, atol=1e-12)

    def test_zero_code(self, rng):
        P = rng.standard_normal((5, 3))
        np.testing.assert_array_equal(approximation_errors(P, unit_columns(rng, 5, 8), np.zeros((8, 3))), P)

    def test_matches_triple_loop(self, rng):
        k, K, N = 6, 10, 7
        P = rng.standard_normal((k, N))
        D = unit_columns(rng, k, K)
        A = rng.standard_normal((K, N))
        E = np.empty((k, N))
        for i in range(k):
            for n in range(N):
                acc = 0.0
                for j in range(K):
                    acc += D[i, j] * A[j, n]
                E[i, n] = P[i, n] - acc
        np.testing.assert_allclose(approximation_errors(P, Dictionary(D), A), E, rtol=0, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            approximation_errors(np.zeros((5, 3)), unit_columns(rng, 5, 8), np.zeros((7, 3)))


class TestCorrelationMatrix:
    def test_hand_case_singular(self):
        E = np.array([[1.0, -1.0], [1.0, -1.0]])
        C = correlation_matrix(E, ridge=0.0)
        np.testing.assert_array_equal(C.C, [[1.0, 1.0], [1.0, 1.0]])
        assert C.factor is None
        with pytest.raises(linalg.LinAlgError):
            mahalanobis_diag(E, C)

    def test_hand_case_second_moment(self):
        # columns (1,1) and (2,0): (1/N) E E^T = [[2.5, 0.5], [0.5, 0.5]]
        E = np.array([[1.0, 2.0], [1.0, 0.0]])
        sigma = E @ E.T / 2
        np.testing.assert_array_equal(sigma, [[2.5, 0.5], [0.5, 0.5]])
        C = correlation_matrix(E, ridge=0.0)
        np.testing.assert_allclose(C.C, [[1.0, 0.5 / np.sqrt(2.5 * 0.5)], [0.5 / np.sqrt(2.5 * 0.5), 1.0]])

    def test_unit_diagonal_input(self, rng):
        # rows with unit second moment: Sigma already has unit diagonal
        E = rng.standard_normal((4, 50))
        E /= np.sqrt(np.mean(E**2, axis=1, keepdims=True))
        sigma = E @ E.T / 50
        C = correlation_matrix(E, ridge=0.01)
        np.testing.assert_allclose(C.C, sigma + 0.01 * np.eye(4), atol=1e-12)

    def test_zero_variance_dimension(self):
        E = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
        C = correlation_matrix(E, ridge=1e-3)
        np.testing.assert_allclose(np.diag(C.C), 1.0 + 1e-3)
        assert C.C[0, 1] == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            correlation_matrix(np.zeros((3, 0)))
        with pytest.raises(ValueError):
            correlation_matrix(np.array([[np.nan, 1.0]]))

    @given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 30), st.floats(1e-6, 1.0))
    def test_invariants(self, seed, k, N, ridge):
        rng = np.random.default_rng(seed)
        E = rng.standard_normal((k, N)) * rng.uniform(0.1, 10, (k, 1))
        C = correlation_matrix(E, ridge)
        np.testing.assert_allclose(C.C, C.C.T, atol=1e-10)
        np.testing.assert_allclose(np.diag(C.C), 1.0 + ridge, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(C.C) > 0)
        assert C.ridge == ridge


def naive_quadratic_forms(E, C):
    return np.diag(E.T @ np.linalg.inv(C) @ E)


class TestMahalanobisDiag:
    def test_identity_metric(self, rng):
        E = rng.standard_normal((5, 9))
        out = mahalanobis_diag(E, identity_correlation(5, 0.0))
        np.testing.assert_allclose(out, np.sum(E**2, axis=0), rtol=1e-13)

    def test_single_column(self, rng):
        E = rng.standard_normal((5, 40))
        C = correlation_matrix(E)
        e = rng.standard_normal(5)
        ref = e @ np.linalg.solve(C.C, e)
        assert mahalanobis_diag(e, C)[0] == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_product(self, seed):
        rng = np.random.default_rng(seed)
        E = rng.standard_normal((5, 9))
        C = correlation_matrix(rng.standard_normal((5, 30)), ridge=1e-3)
        np.testing.assert_allclose(mahalanobis_diag(E, C), naive_quadratic_forms(E, C.C), rtol=1e-10)

    def test_fortran_order_path(self, rng):
        R = rng.standard_normal((40, 6))
        C = correlation_matrix(R.T)
        np.testing.assert_allclose(mahalanobis_diag(R.T, C), mahalanobis_diag(np.ascontiguousarray(R.T), C),
                                   rtol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            mahalanobis_diag(np.zeros((4, 2)), identity_correlation(5))

    @given(st.integers(0, 10_000), st.integers(1, 10), st.integers(1, 20))
    def test_non_negative(self, seed, k, N):
        rng = np.random.default_rng(seed)
        C = correlation_matrix(rng.standard_normal((k, max(N, 2))), ridge=1e-6)
        assert np.all(mahalanobis_diag(rng.standard_normal((k, N)), C) >= 0)


class TestSplitPatchPenalty:
    @given(st.integers(0, 10_000), st.sampled_from([0.0, 1.0]))
    def test_indicator_factors_out(self, seed, h):
        rng = np.random.default_rng(seed)
        P, Q = rng.standard_normal((2, 12))
        d = P - Q
        assert split_patch_penalty(P, Q, h) == float(d @ d) * h

    def test_shape_check(self):
        with pytest.raises(ValueError):
            split_patch_penalty(np.zeros(3), np.zeros(4), 1.0)


class TestFidelityFields:
    def test_single_pixel(self):
        img = np.full((1, 1, 1), 0.4)
        D1 = Dictionary(np.array([[1.0]]), patch_size=1, channels=1)
        E1, E2, P = fidelity_fields(img, D1, D1, 1)
        assert E1.shape == (1, 1)
        assert E1[0, 0] == 0.0

    def test_column_count(self, small_scene):
        img = small_scene["image"][:20, :30]
        E1, E2, P = fidelity_fields(img, small_scene["D1"], small_scene["D2"], 3)
        assert E1.shape[1] == E2.shape[1] == P.shape[1] == 600

    @pytest.mark.parametrize("accelerate", [False, True])
    def test_per_pixel_composition(self, small_scene, accelerate):
        img = small_scene["image"][30:46, 30:46]
        D1, D2 = small_scene["D1"], small_scene["D2"]
        E1, E2, _ = fidelity_fields(img, D1, D2, 3, accelerate=accelerate)
        for n in range(256):
            x, y = n % 16, n // 16
            p = extract_patch(img, (x, y), 4)
            for D, E in ((D1, E1), (D2, E2)):
                ref = p - D.atoms @ omp(D, p, 3).coefficients
                np.testing.assert_allclose(E[:, n], ref, atol=1e-9)

    def test_geometry_mismatch(self, small_scene):
        other = Dictionary(np.eye(27), patch_size=3, channels=3)
        with pytest.raises(ValueError):
            fidelity_fields(small_scene["image"], small_scene["D1"], other, 3)

    def test_channel_mismatch(self, small_scene):
        with pytest.raises(ValueError):
            fidelity_fields(np.zeros((8, 8)), small_scene["D1"], small_scene["D2"], 3)
