"""Greedy pursuit (OMP, Batch-OMP) and KSVD dictionary learning.

KSVD minimises ``||M - D A||_F`` subject to every column of ``A`` having at
most ``rho`` non-zeros, alternating a sparse-coding stage with per-atom rank-1
SVD updates of the dictionary.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from lsksvd._accel import njit, use_numba

__all__ = [
    "Dictionary",
    "SparseCode",
    "TrainConfig",
    "omp",
    "batch_omp",
    "ksvd_train",
    "update_atoms",
    "save_dictionary",
    "load_dictionary",
    "dictionary_to_json",
]

log = logging.getLogger(__name__)

# relative stopping thresholds shared by every OMP path
RESIDUAL_RTOL = 1e-10
CORRELATION_RTOL = 1e-14
CHOLESKY_RIDGE = 1e-12

DICT_FORMAT = "lsksvd-dict"
DICT_VERSION = 1


@dataclass
class Dictionary:
    """``k x K`` matrix of unit-norm atoms plus the patch geometry they describe."""

    atoms: np.ndarray
    patch_size: int | None = None
    channels: int | None = None

    def __post_init__(self):
        self.atoms = np.ascontiguousarray(np.asarray(self.atoms, dtype=np.float64))
        if self.atoms.ndim != 2 or self.atoms.shape[1] < 1:
            raise ValueError(f"atoms must be a k x K matrix with K >= 1, got {self.atoms.shape}")
        if not np.all(np.isfinite(self.atoms)):
            raise ValueError("atoms contain non-finite values")
        norms = np.linalg.norm(self.atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("dictionary atoms must have unit norm")
        if self.patch_size is not None and self.channels is not None:
            if self.patch_size**2 * self.channels != self.atoms.shape[0]:
                raise ValueError(
                    f"atom length {self.atoms.shape[0]} != patch_size^2 * channels "
                    f"({self.patch_size}^2 * {self.channels})"
                )

    @property
    def k(self):
        return self.atoms.shape[0]

    @property
    def K(self):
        return self.atoms.shape[1]

    def same_geometry(self, other):
        return (self.k, self.patch_size, self.channels) == (other.k, other.patch_size, other.channels)


class SparseCode(NamedTuple):
    coefficients: np.ndarray
    support: list
    residual_norms: list


@dataclass
class TrainConfig:
    K: int = 128
    rho: int = 8
    iterations: int = 30
    init: str = "random-samples"
    seed: int = 0
    unused_atom_threshold: int = 1
    duplicate_threshold: float = 0.99
    rtol: float = 1e-6

    def validate(self, k):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 1 <= self.rho <= min(k, self.K):
            raise ValueError(f"rho must satisfy 1 <= rho <= min(k, K) = {min(k, self.K)}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.init not in ("random-samples", "random-unit"):
            raise ValueError(f"unknown init {self.init!r}")


def _atoms(dictionary):
    if isinstance(dictionary, Dictionary):
        return dictionary.atoms
    return np.asarray(dictionary, dtype=np.float64)


def _check_rho(rho, K):
    if rho < 1:
        raise ValueError("rho must be >= 1")
    if rho > K:
        raise ValueError(f"rho={rho} exceeds the number of atoms K={K}")


def _solve_normal(G, b):
    try:
        c = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError:
        c = linalg.cho_factor(G + CHOLESKY_RIDGE * np.eye(len(G)), lower=True)
    return linalg.cho_solve(c, b)


def omp(dictionary, signal, rho):
    """Orthogonal matching pursuit for a single signal.

    Each step picks the atom with the largest ``|<d, r>|`` against the current
    residual and re-solves least squares on the whole support through the
    normal equations.
    """
    D = _atoms(dictionary)
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    k, K = D.shape
    if x.shape[0] != k:
        raise ValueError(f"signal has dimension {x.shape[0]}, dictionary expects {k}")
    _check_rho(rho, K)

    alpha = np.zeros(K)
    support = []
    xnorm = float(np.linalg.norm(x))
    norms = [xnorm]
    if xnorm == 0.0:
        return SparseCode(alpha, support, norms)

    r = x.copy()
    coef = np.zeros(0)
    while len(support) < rho:
        corr = D.T @ r
        j = int(np.argmax(np.abs(corr)))
        if abs(corr[j]) <= CORRELATION_RTOL * xnorm or j in support:
            break
        support.append(j)
        Ds = D[:, support]
        coef = _solve_normal(Ds.T @ Ds, Ds.T @ x)
        r = x - Ds @ coef
        rnorm = float(np.linalg.norm(r))
        norms.append(rnorm)
        if rnorm < RESIDUAL_RTOL * xnorm:
            break
    alpha[support] = coef
    return SparseCode(alpha, support, norms)


@njit(cache=True)
def _batch_omp_numba(D, G, DtX, X, rho, A):
    k, K = D.shape
    N = X.shape[1]
    L = np.zeros((rho, rho))
    idx = np.zeros(rho, dtype=np.int64)
    w = np.zeros(rho)
    y = np.zeros(rho)
    a = np.zeros(rho)
    c = np.zeros(K)
    r = np.zeros(k)
    for n in range(N):
        xnorm = 0.0
        for i in range(k):
            xnorm += X[i, n] * X[i, n]
        xnorm = math.sqrt(xnorm)
        if xnorm == 0.0:
            continue
        for i in range(K):
            c[i] = DtX[i, n]
        s = 0
        while s < rho:
            j = -1
            best = 0.0
            for i in range(K):
                v = abs(c[i])
                if v > best:
                    best = v
                    j = i
            if j < 0 or best <= 1e-14 * xnorm:
                break
            dup = False
            for t in range(s):
                if idx[t] == j:
                    dup = True
            if dup:
                break
            # incremental Cholesky of the support Gram matrix
            if s == 0:
                d2 = G[j, j]
            else:
                for t in range(s):
                    acc = G[idx[t], j]
                    for u in range(t):
                        acc -= L[t, u] * w[u]
                    w[t] = acc / L[t, t]
                d2 = G[j, j]
                for t in range(s):
                    d2 -= w[t] * w[t]
                for t in range(s):
                    L[s, t] = w[t]
            if d2 <= 0.0:
                d2 += 1e-12
                if d2 <= 0.0:
                    d2 = 1e-12
            L[s, s] = math.sqrt(d2)
            idx[s] = j
            s += 1
            # forward then back substitution
            for t in range(s):
                acc = DtX[idx[t], n]
                for u in range(t):
                    acc -= L[t, u] * y[u]
                y[t] = acc / L[t, t]
            for t in range(s - 1, -1, -1):
                acc = y[t]
                for u in range(t + 1, s):
                    acc -= L[u, t] * a[u]
                a[t] = acc / L[t, t]
            rn = 0.0
            for i in range(k):
                acc = X[i, n]
                for t in range(s):
                    acc -= D[i, idx[t]] * a[t]
                r[i] = acc
                rn += acc * acc
            rn = math.sqrt(rn)
            if rn < 1e-10 * xnorm:
                break
            for i in range(K):
                acc = DtX[i, n]
                for t in range(s):
                    acc -= G[i, idx[t]] * a[t]
                c[i] = acc
        for t in range(s):
            A[idx[t], n] = a[t]


def _solve_batched(Gs, b):
    try:
        return np.linalg.solve(Gs, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(b)
        eye = np.eye(Gs.shape[1])
        for i in range(len(b)):
            try:
                out[i] = np.linalg.solve(Gs[i], b[i])
            except np.linalg.LinAlgError:
                out[i] = np.linalg.solve(Gs[i] + CHOLESKY_RIDGE * eye, b[i])
        return out


def _batch_omp_numpy(D, G, DtX, X, rho, A, chunk=2048):
    N = X.shape[1]
    for start in range(0, N, chunk):
        cols = np.arange(start, min(N, start + chunk))
        Xc = X[:, cols]
        bc = DtX[:, cols]
        c = bc.copy()
        xnorm = np.linalg.norm(Xc, axis=0)
        active = xnorm > 0
        n = len(cols)
        support = np.zeros((n, rho), dtype=np.intp)
        coef = np.zeros((n, rho))
        size = np.zeros(n, dtype=np.intp)
        for s in range(rho):
            live = np.flatnonzero(active)
            if live.size == 0:
                break
            mag = np.abs(c[:, live])
            j = mag.argmax(axis=0)
            best = mag[j, np.arange(live.size)]
            stop = best <= CORRELATION_RTOL * xnorm[live]
            if s > 0:
                stop |= np.any(support[live, :s] == j[:, None], axis=1)
            active[live[stop]] = False
            live, j = live[~stop], j[~stop]
            if live.size == 0:
                break
            support[live, s] = j
            size[live] = s + 1
            S = support[live, : s + 1]
            Gs = G[S[:, :, None], S[:, None, :]]
            a = _solve_batched(Gs, bc[S, live[:, None]])
            coef[live, : s + 1] = a
            r = Xc[:, live] - np.einsum("kns,ns->kn", D[:, S], a)
            rn = np.linalg.norm(r, axis=0)
            done = rn < RESIDUAL_RTOL * xnorm[live]
            active[live[done]] = False
            c[:, live] = bc[:, live] - np.einsum("kns,ns->kn", G[:, S], a)
        for t in range(rho):
            has = size > t
            A[support[has, t], cols[has]] = coef[has, t]


def batch_omp(dictionary, signals, rho, accelerate=None):
    """OMP for every column of ``signals`` (``k x N``) -> ``K x N`` codes.

    Correlations are updated through the precomputed Gram matrix ``D^T D``;
    the result matches :func:`omp` column by column.
    """
    D = _atoms(dictionary)
    X = np.asarray(signals, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    k, K = D.shape
    if X.shape[0] != k:
        raise ValueError(f"signals have dimension {X.shape[0]}, dictionary expects {k}")
    _check_rho(rho, K)
    A = np.zeros((K, X.shape[1]))
    if X.shape[1] == 0:
        return A
    D = np.ascontiguousarray(D)
    X = np.ascontiguousarray(X)
    G = D.T @ D
    DtX = D.T @ X
    if use_numba(accelerate):
        _batch_omp_numba(D, G, DtX, X, int(rho), A)
    else:
        _batch_omp_numpy(D, G, DtX, X, int(rho), A)
    return A


def update_atoms(M, D, A, usage_threshold=1, on_atom=None):
    """One KSVD dictionary-update sweep, in place.

    For every atom with at least ``usage_threshold`` users, the restricted
    residual is replaced by its best rank-1 approximation. Returns the indices
    of atoms that were skipped for low usage. ``on_atom(j, D, A)`` is called
    after each atom update.
    """
    unused = []
    for j in range(D.shape[1]):
        users = np.flatnonzero(A[j])
        if users.size < max(usage_threshold, 1):
            unused.append(j)
            continue
        Aj = A[:, users]
        E = M[:, users] - D @ Aj + np.outer(D[:, j], Aj[j])
        U, sv, Vt = np.linalg.svd(E, full_matrices=False)
        D[:, j] = U[:, 0]
        A[j, users] = sv[0] * Vt[0]
        if on_atom is not None:
            on_atom(j, D, A)
    return unused


def _replace_atoms(M, D, A, unused, dup_threshold):
    """Swap unused or near-duplicate atoms for the worst-approximated signals."""
    replace = set(unused)
    gram = np.abs(D.T @ D)
    np.fill_diagonal(gram, 0.0)
    K = D.shape[1]
    for j in range(K):
        if j in replace:
            continue
        if np.any(gram[j, :j][[i not in replace for i in range(j)]] > dup_threshold):
            replace.add(j)
    if not replace:
        return 0
    err = np.sum((M - D @ A) ** 2, axis=0)
    norms = np.linalg.norm(M, axis=0)
    err[norms == 0] = -1.0
    for j in sorted(replace):
        n = int(np.argmax(err))
        if err[n] < 0:
            break
        D[:, j] = M[:, n] / norms[n]
        A[j] = 0.0
        err[n] = -1.0
    return len(replace)


def _init_dictionary(M, cfg, rng):
    k, N = M.shape
    if cfg.init == "random-unit":
        D = rng.standard_normal((k, cfg.K))
        return D / np.linalg.norm(D, axis=0)
    norms = np.linalg.norm(M, axis=0)
    candidates = np.flatnonzero(norms > 0)
    _, first = np.unique(M[:, candidates].T, axis=0, return_index=True)
    distinct = candidates[np.sort(first)]
    if distinct.size < cfg.K:
        raise ValueError(
            f"need at least K={cfg.K} distinct non-zero signals for initialization, got {distinct.size}"
        )
    pick = np.sort(rng.choice(distinct, size=cfg.K, replace=False))
    return M[:, pick] / norms[pick]


def ksvd_train(signals, cfg=None, patch_size=None, channels=None, history=None, accelerate=None):
    """Learn a dictionary for ``signals`` (``k x N``).

    Returns ``(Dictionary, A)`` where ``A`` is the Batch-OMP code of the
    signals over the final dictionary. If ``history`` is a list, the
    objective ``||M - D A||_F`` after each iteration's update stage is
    appended, followed by the objective of the returned pair.
    """
    cfg = cfg or TrainConfig()
    M = np.asarray(signals, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("signals must be a k x N matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("signals contain non-finite values")
    k, N = M.shape
    cfg.validate(k)
    if N < cfg.K:
        warnings.warn(f"fewer signals ({N}) than atoms ({cfg.K})", stacklevel=2)

    rng = np.random.default_rng(cfg.seed)
    D = _init_dictionary(M, cfg, rng)
    prev = None
    for it in range(cfg.iterations):
        A = batch_omp(D, M, cfg.rho, accelerate=accelerate)
        unused = update_atoms(M, D, A, cfg.unused_atom_threshold)
        obj = float(np.linalg.norm(M - D @ A))
        if history is not None:
            history.append(obj)
        n_rep = _replace_atoms(M, D, A, unused, cfg.duplicate_threshold)
        log.debug("ksvd iteration %d: objective %.6g, replaced %d atoms", it + 1, obj, n_rep)
        if prev is not None and n_rep == 0 and prev - obj <= cfg.rtol * max(prev, 1e-300):
            break
        prev = obj
    D /= np.linalg.norm(D, axis=0)
    A = batch_omp(D, M, cfg.rho, accelerate=accelerate)
    if history is not None:
        history.append(float(np.linalg.norm(M - D @ A)))
    return Dictionary(D, patch_size, channels), A


def dictionary_to_json(dictionary, extra=None):
    doc = {
        "format": DICT_FORMAT,
        "version": DICT_VERSION,
        "patch_size": dictionary.patch_size,
        "channels": dictionary.channels,
        "k": dictionary.k,
        "K": dictionary.K,
    }
    if extra:
        doc["config"] = extra
    # json writes floats with repr(), which round-trips exactly
    doc["atoms"] = [[float(v) for v in col] for col in dictionary.atoms.T]
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def save_dictionary(path, dictionary, extra=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dictionary_to_json(dictionary, extra))


def load_dictionary(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != DICT_FORMAT:
        raise ValueError(f"{path}: not a {DICT_FORMAT} document")
    if doc.get("version") != DICT_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    atoms = np.array(doc["atoms"], dtype=np.float64).T
    if atoms.shape != (doc["k"], doc["K"]):
        raise ValueError(f"{path}: atoms shape {atoms.shape} != ({doc['k']}, {doc['K']})")
    return Dictionary(atoms, doc.get("patch_size"), doc.get("channels"))
