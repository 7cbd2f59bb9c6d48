"""Dictionary approximation errors and their correlation-weighted norms.

The region fidelity of a pixel is ``e^T C^{-1} e`` where ``e = P - D alpha`` is
its patch's approximation error and ``C`` is the correlation matrix of the
errors over the region (errors are taken to be zero-mean).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from lsksvd.imaging import as_image, extract_all_patches
from lsksvd.sparse import Dictionary, batch_omp

__all__ = [
    "CorrelationMatrix",
    "approximation_errors",
    "split_patch_penalty",
    "correlation_matrix",
    "correlation_from_moment",
    "identity_correlation",
    "mahalanobis_diag",
    "fidelity_fields",
]

log = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-3


def approximation_errors(patches, dictionary, A):
    """``E = P - D A`` for a ``k x N`` patch matrix and ``K x N`` codes."""
    P = np.asarray(patches, dtype=np.float64)
    D = dictionary.atoms if isinstance(dictionary, Dictionary) else np.asarray(dictionary, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if P.ndim != 2 or D.ndim != 2 or A.ndim != 2:
        raise ValueError("patches, dictionary and codes must be 2-D")
    if D.shape[0] != P.shape[0] or D.shape[1] != A.shape[0] or A.shape[1] != P.shape[1]:
        raise ValueError(f"incompatible shapes P{P.shape}, D{D.shape}, A{A.shape}")
    return P - D @ A


def split_patch_penalty(patch, approx, h):
    """``||P*h - (D alpha)*h||^2`` with the indicator applied to each side separately.

    For a binary ``h`` this equals ``||P - D alpha||^2 * h``.
    """
    P = np.asarray(patch, dtype=np.float64)
    Q = np.asarray(approx, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError("patch and approximation differ in shape")
    diff = P * h - Q * h
    return float(diff @ diff)


@dataclass(frozen=True)
class CorrelationMatrix:
    """Ridge-regularised correlation matrix with its cached Cholesky factor and inverse.

    ``factor`` and ``inv`` are ``None`` when ``C`` is singular (only possible
    with ``ridge == 0``).
    """

    C: np.ndarray
    ridge: float
    factor: tuple | None
    inv: np.ndarray | None

    @property
    def k(self):
        return self.C.shape[0]

    def solve(self, B):
        return linalg.cho_solve(self.factor, B)


def _factorize(C, ridge):
    try:
        factor = linalg.cho_factor(C, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError(
            f"correlation matrix is not positive definite with ridge={ridge}"
        ) from exc
    inv = linalg.cho_solve(factor, np.eye(C.shape[0]))
    inv = 0.5 * (inv + inv.T)
    return CorrelationMatrix(C, float(ridge), factor, inv)


def correlation_matrix(E, ridge=DEFAULT_RIDGE):
    """Correlation matrix of the columns of ``E`` (``k x N``), plus ``ridge * I``.

    The second moment ``E E^T / N`` stands in for the covariance. Dimensions
    with zero variance keep scale 1.
    """
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2:
        raise ValueError("E must be a k x N matrix")
    if E.shape[1] == 0:
        raise ValueError("cannot build a correlation matrix from zero columns")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if not np.all(np.isfinite(E)):
        raise ValueError("E contains non-finite values")
    return correlation_from_moment((E @ E.T) / E.shape[1], ridge)


def correlation_from_moment(sigma, ridge=DEFAULT_RIDGE):
    """Standardise a second-moment matrix to unit diagonal and add ``ridge * I``."""
    var = np.diag(sigma).copy()
    ok = var > 0
    scale = np.ones_like(var)
    scale[ok] = 1.0 / np.sqrt(var[ok])
    C = sigma * scale[:, None] * scale[None, :]
    C = 0.5 * (C + C.T)
    # zero-variance rows are all zero; put the unit diagonal back
    C[np.diag_indices_from(C)] = 1.0 + ridge
    if ridge == 0:
        try:
            return _factorize(C, ridge)
        except linalg.LinAlgError:
            return CorrelationMatrix(C, 0.0, None, None)
    return _factorize(C, ridge)


def identity_correlation(k, ridge=DEFAULT_RIDGE):
    return _factorize(np.eye(k) * (1.0 + ridge), ridge)


def mahalanobis_diag(E, C):
    """``diag(E^T C^{-1} E)`` as column sums of ``(C^{-1} E) * E``.

    The ``N x N`` product is never formed. A Fortran-ordered ``E`` (e.g. the
    transpose of a pixel-major matrix) is processed row-wise without copying.
    """
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    if E.shape[0] != C.k:
        raise ValueError(f"error dimension {E.shape[0]} != correlation size {C.k}")
    if C.factor is None:
        raise linalg.LinAlgError("correlation matrix is singular; use a positive ridge")
    if E.flags.f_contiguous and not E.flags.c_contiguous:
        R = E.T
        out = np.einsum("nk,nk->n", R @ C.inv, R)
    else:
        out = np.einsum("kn,kn->n", C.inv @ E, E)
    return np.maximum(out, 0.0)


def fidelity_fields(image, D1, D2, rho, accelerate=None):
    """Per-pixel approximation errors of ``image`` under both dictionaries.

    Returns ``(E1, E2, P)``: ``k x (H*W)`` matrices in row-major pixel order.
    """
    img = as_image(image)
    if not D1.same_geometry(D2):
        raise ValueError("dictionaries have different patch geometry")
    s = D1.patch_size
    if s is None:
        raise ValueError("dictionary carries no patch_size")
    if D1.channels is not None and D1.channels != img.shape[2]:
        raise ValueError(f"dictionary expects {D1.channels} channels, image has {img.shape[2]}")
    P = extract_all_patches(img, s)
    E1 = approximation_errors(P, D1, batch_omp(D1, P, rho, accelerate=accelerate))
    E2 = approximation_errors(P, D2, batch_omp(D2, P, rho, accelerate=accelerate))
    return E1, E2, P
