"""Patch classifier built from the two class dictionaries, and ROC analysis."""

from dataclasses import dataclass

import numpy as np

from lsksvd.errors import approximation_errors, mahalanobis_diag
from lsksvd.sparse import batch_omp, omp

__all__ = ["classify_patch", "classify_patches", "RocCurve", "roc_curve", "format_roc"]


def _norm2(E, C, metric):
    if metric == "l2":
        return np.einsum("kn,kn->n", E, E)
    if metric != "correlation":
        raise ValueError(f"unknown metric {metric!r}")
    if C is None:
        raise ValueError("correlation metric needs a CorrelationMatrix")
    return mahalanobis_diag(E, C)


def classify_patch(P, D1, D2, C1=None, C2=None, rho=8, metric="correlation"):
    """Label a single patch vector.

    ``score = ||e2||^2_{C2} - ||e1||^2_{C1}``; the patch is class 1 when the
    score is positive and class 2 otherwise (ties go to class 2).
    ``metric="l2"`` ignores the correlation matrices.
    """
    P = np.asarray(P, dtype=np.float64).reshape(-1)
    if not D1.same_geometry(D2) or P.shape[0] != D1.k:
        raise ValueError("patch and dictionary geometries do not match")
    e1 = P - D1.atoms @ omp(D1, P, rho).coefficients
    e2 = P - D2.atoms @ omp(D2, P, rho).coefficients
    score = float(_norm2(e2[:, None], C2, metric)[0] - _norm2(e1[:, None], C1, metric)[0])
    return (1 if score > 0 else 2), score


def classify_patches(X, D1, D2, C1=None, C2=None, rho=8, metric="correlation", accelerate=None):
    """Vectorised :func:`classify_patch` over the columns of ``X``.

    Returns ``(labels, scores)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if not D1.same_geometry(D2) or X.shape[0] != D1.k:
        raise ValueError("patch and dictionary geometries do not match")
    E1 = approximation_errors(X, D1, batch_omp(D1, X, rho, accelerate=accelerate))
    E2 = approximation_errors(X, D2, batch_omp(D2, X, rho, accelerate=accelerate))
    scores = _norm2(E2, C2, metric) - _norm2(E1, C1, metric)
    return np.where(scores > 0, 1, 2), scores


@dataclass
class RocCurve:
    """ROC points ordered by decreasing threshold, from (0, 0) to (1, 1)."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores, labels):
    """Sweep a threshold over the distinct scores; label 1 is the positive class.

    A sample is predicted positive when ``score > threshold``. The sentinel
    thresholds ``+inf`` and ``-inf`` pin the curve to (0, 0) and (1, 1). The
    AUC is the trapezoidal area, which counts tied pairs as one half.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(y, (1, 2))):
        raise ValueError("labels must be 1 or 2")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")

    distinct = np.unique(s)[::-1]
    thresholds = np.concatenate([[np.inf], distinct, [-np.inf]])
    order = np.argsort(-s, kind="stable")
    s_sorted, pos_sorted = s[order], pos[order]
    tp_cum = np.concatenate([[0], np.cumsum(pos_sorted)])
    fp_cum = np.concatenate([[0], np.cumsum(~pos_sorted)])
    # number of samples with score > t, for t in thresholds
    above = np.searchsorted(-s_sorted, -thresholds, side="left")
    tpr = tp_cum[above] / n_pos
    fpr = fp_cum[above] / n_neg
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def format_roc(roc):
    lines = ["threshold fpr tpr"]
    for t, f, p in zip(roc.thresholds, roc.fpr, roc.tpr):
        lines.append(f"{float(t)!r} {float(f)!r} {float(p)!r}")
    lines.append(f"auc {roc.auc!r}")
    return "\n".join(lines) + "\n"
