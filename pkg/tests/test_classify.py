import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lsksvd.classify import classify_patch, classify_patches, format_roc, roc_curve
from lsksvd.errors import correlation_matrix, identity_correlation
from lsksvd.sparse import Dictionary, batch_omp


def mann_whitney(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 2]
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return wins / (len(pos) * len(neg))


def naive_codes(D, x, rho):
    r = x.copy()
    support = []
    coef = np.zeros(0)
    for _ in range(rho):
        support.append(int(np.argmax(np.abs(D.T @ r))))
        Ds = D[:, support]
        coef = np.linalg.solve(Ds.T @ Ds, Ds.T @ x)
        r = x - Ds @ coef
    return r


class TestClassifyPatch:
    def _dicts(self, rng):
        D1 = np.linalg.qr(rng.standard_normal((6, 6)))[0][:, :3]
        D2 = np.linalg.qr(rng.standard_normal((6, 6)))[0][:, :3]
        return Dictionary(D1), Dictionary(D2)

    def test_spanned_by_d1(self, rng):
        D1, D2 = self._dicts(rng)
        P = D1.atoms @ np.array([1.0, -2.0, 0.5])
        C = identity_correlation(6)
        label, score = classify_patch(P, D1, D2, C, C, rho=3)
        assert label == 1 and score > 0

    def test_tie_goes_to_class_2(self, rng):
        D1, _ = self._dicts(rng)
        C = identity_correlation(6)
        label, score = classify_patch(rng.standard_normal(6), D1, D1, C, C, rho=2)
        assert score == 0.0
        assert label == 2

    def test_l2_metric(self, rng):
        D1, D2 = self._dicts(rng)
        P = D2.atoms @ np.array([0.3, 1.0, 0.0])
        label, score = classify_patch(P, D1, D2, rho=2, metric="l2")
        assert label == 2 and score < 0

    def test_correlation_metric_needs_matrices(self, rng):
        D1, D2 = self._dicts(rng)
        with pytest.raises(ValueError):
            classify_patch(np.ones(6), D1, D2, rho=1)

    def test_geometry_mismatch(self, rng):
        D1, _ = self._dicts(rng)
        with pytest.raises(ValueError):
            classify_patch(np.ones(5), D1, D1, rho=1, metric="l2")

    def test_matches_naive_classifier(self, small_scene):
        ds, D1, D2 = small_scene["dataset"], small_scene["D1"], small_scene["D2"]
        X1, X2 = ds.class_patches(1), ds.class_patches(2)
        C1 = correlation_matrix(X1 - D1.atoms @ batch_omp(D1, X1, 3))
        C2 = correlation_matrix(X2 - D2.atoms @ batch_omp(D2, X2, 3))
        T = np.concatenate([ds.class_patches(1, "test")[:, :200], ds.class_patches(2, "test")[:, :200]], axis=1)
        labels, scores = classify_patches(T, D1, D2, C1, C2, rho=3)
        inv1, inv2 = np.linalg.inv(C1.C), np.linalg.inv(C2.C)
        for n in range(T.shape[1]):
            e1 = naive_codes(D1.atoms, T[:, n], 3)
            e2 = naive_codes(D2.atoms, T[:, n], 3)
            s = e2 @ inv2 @ e2 - e1 @ inv1 @ e1
            assert scores[n] == pytest.approx(s, rel=1e-7, abs=1e-10)
            assert labels[n] == (1 if s > 0 else 2)
            single = classify_patch(T[:, n], D1, D2, C1, C2, rho=3)
            assert single[0] == labels[n]

    def test_sign_only_dependence(self, rng):
        D1, D2 = self._dicts(rng)
        C = correlation_matrix(rng.standard_normal((6, 40)))
        scaled = type(C)(C.C / 3.0, C.ridge, C.factor, C.inv * 3.0)
        X = rng.standard_normal((6, 30))
        la, sa = classify_patches(X, D1, D2, C, C, rho=2)
        lb, sb = classify_patches(X, D1, D2, scaled, scaled, rho=2)
        np.testing.assert_array_equal(la, lb)
        np.testing.assert_allclose(sb, 3.0 * sa, rtol=1e-12)


class TestRoc:
    def test_hand_example(self):
        roc = roc_curve([0.1, 0.4, 0.35, 0.8], [2, 2, 1, 1])
        assert roc.auc == pytest.approx(0.75)

    def test_perfect(self):
        roc = roc_curve([0.9, 0.8, 0.1, 0.2], [1, 1, 2, 2])
        assert roc.auc == 1.0
        assert (0.0, 1.0) in roc.points

    def test_endpoints_and_rows(self):
        scores = [0.3, 0.3, 0.1, 0.9, 0.5]
        roc = roc_curve(scores, [1, 2, 2, 1, 1])
        assert roc.points[0] == (0.0, 0.0) and roc.points[-1] == (1.0, 1.0)
        assert len(roc.thresholds) == len(set(scores)) + 2
        assert np.isinf(roc.thresholds[0]) and np.isinf(roc.thresholds[-1])

    def test_random_labels(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal(10_000)
        y = rng.integers(1, 3, 10_000)
        assert roc_curve(s, y).auc == pytest.approx(0.5, abs=0.02)

    def test_errors(self):
        with pytest.raises(ValueError):
            roc_curve([1.0, 2.0], [1, 1])
        with pytest.raises(ValueError):
            roc_curve([1.0, 2.0], [1, 2, 2])
        with pytest.raises(ValueError):
            roc_curve([1.0, 2.0], [0, 1])

    def test_format(self):
        text = format_roc(roc_curve([0.1, 0.4, 0.35, 0.8], [2, 2, 1, 1]))
        lines = text.splitlines()
        assert lines[0] == "threshold fpr tpr"
        assert lines[1].startswith("inf ")
        assert lines[-1] == "auc 0.75"
        assert len(lines) == 1 + 6 + 1

    @given(st.lists(st.tuples(st.integers(-20, 20), st.sampled_from([1, 2])), min_size=2, max_size=60))
    def test_mann_whitney_equality(self, pairs):
        s = np.array([p[0] for p in pairs], dtype=float)
        y = np.array([p[1] for p in pairs])
        if len(set(y.tolist())) < 2:
            return
        roc = roc_curve(s, y)
        assert roc.auc == pytest.approx(mann_whitney(s, y), abs=1e-9)
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
        assert 0.0 <= roc.auc <= 1.0

    @given(st.integers(0, 10_000))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.standard_normal(40)
        y = np.r_[np.ones(20, int), np.full(20, 2)]
        a = roc_curve(s, y)
        b = roc_curve(np.exp(3 * s) + 7, y)
        assert a.points == b.points and a.auc == b.auc

    @given(st.integers(0, 10_000))
    def test_complement(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.permutation(50).astype(float)  # tie-free
        y = rng.integers(1, 3, 50)
        y[:2] = (1, 2)
        assert roc_curve(s, y).auc + roc_curve(-s, y).auc == pytest.approx(1.0, abs=1e-12)
