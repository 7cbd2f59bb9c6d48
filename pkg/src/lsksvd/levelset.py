"""Narrow-band level-set evolution.

Sign convention: ``phi > 0`` is foreground. Grid spacing is one pixel and the
domain boundary uses mirrored neighbours (zero normal derivative).

One time step of :func:`evolve`:

1. band = ``{|phi| < tau}``
2. curvature on the band
3. region correlation matrices from the current partition, then the
   fidelities ``e^T C^{-1} e`` on the band
4. force ``mu * kappa - nu - fid1 + fid2``
5. ``dt = 0.45 / max|force|``
6. ``phi += dt * force`` on the band
7. Sussman re-initialisation every ``reinit_every`` steps
8. area-based convergence check
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from lsksvd._accel import njit, use_numba
from lsksvd.errors import (
    DEFAULT_RIDGE,
    correlation_from_moment,
    correlation_matrix,
    fidelity_fields,
    identity_correlation,
    mahalanobis_diag,
)
from lsksvd.imaging import as_image, lab_a_channel

__all__ = [
    "CFL",
    "SegParams",
    "ConvergenceMonitor",
    "heaviside",
    "delta",
    "init_phi_checkerboard",
    "curvature",
    "curvature_field",
    "force_field",
    "cfl_dt",
    "sussman_reinit",
    "convergence_step",
    "region_correlations",
    "evolve",
    "evolve_fields",
    "baseline_cv_force",
    "evolve_chan_vese",
    "format_trace",
]

log = logging.getLogger(__name__)

CFL = 0.45
FLAT_GRADIENT = 1e-12


@dataclass
class SegParams:
    mu: float = 25.0
    nu: float = 35.0
    tau: float | None = None  # defaults to ``radius``
    eps_h: float = 1.0
    d: float = 0.005
    patience: int = 5
    max_steps: int = 1000
    radius: float = 3.0
    spacing: float = 15.0
    reinit_every: int = 5
    reinit_sweeps: int = 10
    ridge: float = DEFAULT_RIDGE
    intensity_scale: float = 255.0
    kappa_max: float = 1.0  # grid-resolvable curvature bound, 1/h

    def __post_init__(self):
        if self.tau is None:
            self.tau = float(self.radius)
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.tau <= 0 or self.eps_h <= 0:
            raise ValueError("tau and eps_h must be > 0")
        if not 0 < self.d < 1:
            raise ValueError("d must be in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.reinit_every < 1 or self.reinit_sweeps < 1:
            raise ValueError("reinit_every and reinit_sweeps must be >= 1")
        if self.intensity_scale <= 0:
            raise ValueError("intensity_scale must be > 0")
        if not self.kappa_max > 0:
            raise ValueError("kappa_max must be > 0")


def heaviside(z, eps_h=1.0):
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(np.asarray(z, dtype=np.float64) / eps_h))


def delta(z, eps_h=1.0):
    z = np.asarray(z, dtype=np.float64)
    return (eps_h / np.pi) / (eps_h**2 + z**2)


def init_phi_checkerboard(width, height, radius=3.0, spacing=15.0):
    """Signed distance to a lattice of disks, positive inside the disks.

    Disk centers sit at ``spacing/2 + i*spacing`` along both axes.
    """
    if radius <= 0 or spacing <= 0:
        raise ValueError("radius and spacing must be > 0")
    if radius >= spacing / 2:
        raise ValueError("radius must be smaller than spacing / 2")
    half = spacing / 2.0
    x = np.arange(width, dtype=np.float64)
    y = np.arange(height, dtype=np.float64)
    dx = x - (half + np.floor((x - half) / spacing + 0.5) * spacing)
    dy = y - (half + np.floor((y - half) / spacing + 0.5) * spacing)
    return radius - np.sqrt(dy[:, None] ** 2 + dx[None, :] ** 2)


def _derivatives(p):
    """Central differences on a mirror-padded field ``p`` (interior = original)."""
    c = p[1:-1, 1:-1]
    px = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    py = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    pxx = p[1:-1, 2:] - 2.0 * c + p[1:-1, :-2]
    pyy = p[2:, 1:-1] - 2.0 * c + p[:-2, 1:-1]
    pxy = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    return px, py, pxx, pyy, pxy


def _kappa(px, py, pxx, pyy, pxy):
    g2 = px * px + py * py
    num = pxx * py * py - 2.0 * pxy * px * py + pyy * px * px
    with np.errstate(divide="ignore", invalid="ignore"):
        k = num / g2**1.5
    return np.where(g2 < FLAT_GRADIENT, 0.0, k)


@njit(cache=True)
def _curvature_at_numba(p, rows, cols):
    out = np.zeros(rows.shape[0])
    for n in range(rows.shape[0]):
        i = rows[n] + 1
        j = cols[n] + 1
        c = p[i, j]
        px = 0.5 * (p[i, j + 1] - p[i, j - 1])
        py = 0.5 * (p[i + 1, j] - p[i - 1, j])
        pxx = p[i, j + 1] - 2.0 * c + p[i, j - 1]
        pyy = p[i + 1, j] - 2.0 * c + p[i - 1, j]
        pxy = 0.25 * (p[i + 1, j + 1] - p[i + 1, j - 1] - p[i - 1, j + 1] + p[i - 1, j - 1])
        g2 = px * px + py * py
        if g2 < 1e-12:
            out[n] = 0.0
        else:
            out[n] = (pxx * py * py - 2.0 * pxy * px * py + pyy * px * px) / g2**1.5
    return out


def curvature_field(phi, rows=None, cols=None, accelerate=None):
    """``div(grad phi / |grad phi|)`` from 3x3 central differences.

    Returns the full field, or only the values at ``(rows, cols)`` when given.
    Zero where the gradient vanishes.
    """
    phi = np.asarray(phi, dtype=np.float64)
    p = np.pad(phi, 1, mode="symmetric")
    if rows is None:
        return _kappa(*_derivatives(p))
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if use_numba(accelerate):
        return _curvature_at_numba(p, rows, cols)
    i, j = rows + 1, cols + 1
    c = p[i, j]
    px = 0.5 * (p[i, j + 1] - p[i, j - 1])
    py = 0.5 * (p[i + 1, j] - p[i - 1, j])
    pxx = p[i, j + 1] - 2.0 * c + p[i, j - 1]
    pyy = p[i + 1, j] - 2.0 * c + p[i - 1, j]
    pxy = 0.25 * (p[i + 1, j + 1] - p[i + 1, j - 1] - p[i - 1, j + 1] + p[i - 1, j - 1])
    return _kappa(px, py, pxx, pyy, pxy)


def curvature(phi, at):
    """Curvature at the single pixel ``at=(x, y)``."""
    x, y = at
    return float(curvature_field(phi, [y], [x], accelerate=False)[0])


def force_field(kappa, fid1, fid2, mu, nu):
    return mu * np.asarray(kappa) - nu - np.asarray(fid1) + np.asarray(fid2)


def cfl_dt(force):
    f = np.asarray(force, dtype=np.float64)
    if f.size == 0:
        raise ValueError("empty band: no force values")
    fmax = float(np.max(np.abs(f)))
    if fmax < 1e-12:
        return 1.0
    return CFL / fmax


def _interface_distance(phi0):
    """Nodes with a 4-neighbour of opposite sign, and their distance estimate.

    ``D = phi0 / |grad phi0|`` where each gradient component is the largest of
    the central and both one-sided differences.
    """
    p = np.pad(phi0, 1, mode="symmetric")
    c = p[1:-1, 1:-1]
    left, right = p[1:-1, :-2], p[1:-1, 2:]
    up, down = p[:-2, 1:-1], p[2:, 1:-1]
    near = (c == 0) | (c * left < 0) | (c * right < 0) | (c * up < 0) | (c * down < 0)
    gx = np.maximum.reduce([0.5 * np.abs(right - left), np.abs(right - c), np.abs(c - left)])
    gy = np.maximum.reduce([0.5 * np.abs(down - up), np.abs(down - c), np.abs(c - up)])
    grad = np.maximum(np.sqrt(gx**2 + gy**2), 1e-12)
    return near, c / grad


def _sussman_numpy(phi, phi0, dtau, sweeps):
    S = phi0 / np.sqrt(phi0**2 + 1.0)
    sgn = np.sign(phi0)
    pos = phi0 > 0
    neg = phi0 < 0
    near, dist = _interface_distance(phi0)
    for _ in range(sweeps):
        p = np.pad(phi, 1, mode="symmetric")
        c = p[1:-1, 1:-1]
        a = c - p[1:-1, :-2]  # backward x
        b = p[1:-1, 2:] - c  # forward x
        cc = c - p[:-2, 1:-1]  # backward y
        d = p[2:, 1:-1] - c  # forward y
        ap, am = np.maximum(a, 0), np.minimum(a, 0)
        bp, bm = np.maximum(b, 0), np.minimum(b, 0)
        cp, cm = np.maximum(cc, 0), np.minimum(cc, 0)
        dp, dm = np.maximum(d, 0), np.minimum(d, 0)
        g = np.zeros_like(phi)
        g[pos] = np.sqrt(
            np.maximum(ap[pos] ** 2, bm[pos] ** 2) + np.maximum(cp[pos] ** 2, dm[pos] ** 2)
        ) - 1.0
        g[neg] = np.sqrt(
            np.maximum(am[neg] ** 2, bp[neg] ** 2) + np.maximum(cm[neg] ** 2, dp[neg] ** 2)
        ) - 1.0
        new = phi - dtau * S * g
        # subcell fix: interface nodes relax towards their distance estimate
        new[near] = phi[near] - dtau * (sgn[near] * np.abs(phi[near]) - dist[near])
        phi = new
    return phi


@njit(cache=True)
def _sussman_numba(phi, phi0, near, dist, dtau, sweeps):
    H, W = phi.shape
    cur = phi.copy()
    nxt = phi.copy()
    for _ in range(sweeps):
        for i in range(H):
            im = i - 1 if i > 0 else 0
            ip = i + 1 if i < H - 1 else H - 1
            for j in range(W):
                s0 = phi0[i, j]
                c = cur[i, j]
                if near[i, j]:
                    sg = 1.0 if s0 > 0 else (-1.0 if s0 < 0 else 0.0)
                    nxt[i, j] = c - dtau * (sg * abs(c) - dist[i, j])
                    continue
                if s0 == 0.0:
                    nxt[i, j] = c
                    continue
                jm = j - 1 if j > 0 else 0
                jp = j + 1 if j < W - 1 else W - 1
                a = c - cur[i, jm]
                b = cur[i, jp] - c
                cy = c - cur[im, j]
                d = cur[ip, j] - c
                if s0 > 0:
                    gx = max(max(a, 0.0) ** 2, min(b, 0.0) ** 2)
                    gy = max(max(cy, 0.0) ** 2, min(d, 0.0) ** 2)
                else:
                    gx = max(min(a, 0.0) ** 2, max(b, 0.0) ** 2)
                    gy = max(min(cy, 0.0) ** 2, max(d, 0.0) ** 2)
                S = s0 / math.sqrt(s0 * s0 + 1.0)
                nxt[i, j] = c - dtau * S * (math.sqrt(gx + gy) - 1.0)
        cur, nxt = nxt, cur
    return cur


def sussman_reinit(phi, sweeps=10, dtau=0.5, accelerate=None):
    """Relax ``phi`` towards a signed distance function.

    Iterates ``phi <- phi + dtau * S(phi0) * (1 - |grad phi|)`` with the
    smoothed sign ``S(phi0) = phi0 / sqrt(phi0^2 + 1)`` and Godunov upwind
    gradients. Nodes adjacent to the zero level instead relax towards
    ``phi0 / |grad phi0|``, which pins the interface and keeps every node's
    sign.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if use_numba(accelerate):
        near, dist = _interface_distance(phi)
        return _sussman_numba(phi, phi.copy(), near, dist, float(dtau), int(sweeps))
    return _sussman_numpy(phi.copy(), phi.copy(), dtau, sweeps)


@dataclass
class ConvergenceMonitor:
    areas: list = field(default_factory=list)
    counter: int = 0


def convergence_step(monitor, area, d=0.005, patience=5):
    """Record area ``S_t``; converged after ``patience`` consecutive small changes.

    A change counts as small when ``|S_t - S_{t-1}| / max(S_t, 1) < d``.
    Returns ``(monitor, converged)``; ``monitor`` is updated in place.
    """
    if area < 0:
        raise ValueError("area must be >= 0")
    if monitor.areas:
        ratio = abs(area - monitor.areas[-1]) / max(area, 1.0)
        monitor.counter = monitor.counter + 1 if ratio < d else 0
    monitor.areas.append(float(area))
    monitor.counter = min(monitor.counter, patience)
    return monitor, monitor.counter >= patience


class _RegionStats:
    """Second moments of a fixed pixel-major error matrix ``R`` (``N x k``)
    restricted to a pixel subset.

    The subset sum is taken directly or as ``total - complement``, whichever
    touches fewer rows.
    """

    def __init__(self, R):
        self.R = R
        self.N = R.shape[0]
        self.total = R.T @ R

    def correlation(self, members, ridge):
        n = int(members.sum())
        if n == 0:
            return None
        if n <= self.N - n:
            X = self.R[members]
            S = X.T @ X
        else:
            X = self.R[~members]
            S = self.total - X.T @ X
        return correlation_from_moment(S / n, ridge)


def region_correlations(E1, E2, fg, ridge=DEFAULT_RIDGE):
    """``(C1, C2)`` from ``E1`` over ``fg`` and ``E2`` over its complement."""
    fg = np.asarray(fg, dtype=bool).reshape(-1)
    C1 = correlation_matrix(E1[:, fg], ridge) if fg.any() else None
    C2 = correlation_matrix(E2[:, ~fg], ridge) if (~fg).any() else None
    return C1, C2


def format_trace(trace):
    """Render a trace as whitespace-separated text with a header line."""
    lines = ["step area ratio dt max_force band"]
    for row in trace:
        ratio = "nan" if row["ratio"] is None else repr(row["ratio"])
        lines.append(
            f"{row['step']} {row['area']!r} {ratio} {row['dt']!r} {row['max_force']!r} {row['band']}"
        )
    return "\n".join(lines) + "\n"


def _step_record(step, area, prev_area, dt, fmax, band):
    ratio = None if prev_area is None else abs(area - prev_area) / max(area, 1.0)
    return {"step": step, "area": area, "ratio": ratio, "dt": dt, "max_force": fmax, "band": band}


def _run(phi, params, force_fn, accelerate=None, on_step=None):
    """Generic narrow-band loop shared by Level-set KSVD and the baselines."""
    monitor = ConvergenceMonitor()
    trace = []
    H, W = phi.shape
    flat = phi.reshape(-1)
    area = float(heaviside(phi, params.eps_h).sum())
    convergence_step(monitor, area, params.d, params.patience)
    converged = False
    for step in range(1, params.max_steps + 1):
        band = np.flatnonzero(np.abs(flat) < params.tau)
        if band.size == 0:
            log.warning("empty narrow band at step %d", step)
            break
        rows, cols = np.divmod(band, W)
        kappa = curvature_field(phi, rows, cols, accelerate=accelerate)
        np.clip(kappa, -params.kappa_max, params.kappa_max, out=kappa)
        f = force_fn(flat, band, kappa)
        dt = cfl_dt(f)
        flat[band] += dt * f
        if step % params.reinit_every == 0:
            phi = sussman_reinit(phi, params.reinit_sweeps, accelerate=accelerate)
            flat = phi.reshape(-1)
        prev = monitor.areas[-1]
        area = float(heaviside(phi, params.eps_h).sum())
        _, converged = convergence_step(monitor, area, params.d, params.patience)
        trace.append(_step_record(step, area, prev, dt, float(np.max(np.abs(f))), int(band.size)))
        if on_step is not None:
            on_step(step, phi)
        if converged:
            break
    return phi, trace, converged


def evolve_fields(E1, E2, shape, params=None, phi0=None, accelerate=None, warnings_out=None, on_step=None):
    """Evolve a level set given precomputed per-pixel errors.

    ``E1``/``E2`` are ``k x (H*W)`` error matrices in row-major pixel order.
    Returns ``(phi, trace, converged)``.
    """
    params = params or SegParams()
    H, W = shape
    if E1.shape != E2.shape or E1.shape[1] != H * W:
        raise ValueError(f"error matrices {E1.shape}/{E2.shape} do not match a {H}x{W} image")
    scale = params.intensity_scale
    # pixel-major copies: row gathers on the band are contiguous
    R1 = np.ascontiguousarray(E1.T) * scale
    R2 = np.ascontiguousarray(E2.T) * scale
    k = R1.shape[1]
    stats1, stats2 = _RegionStats(R1), _RegionStats(R2)
    fallback = identity_correlation(k, params.ridge)
    phi = (
        init_phi_checkerboard(W, H, params.radius, params.spacing)
        if phi0 is None
        else np.array(phi0, dtype=np.float64)
    )

    def force(flat, band, kappa):
        fg = flat > 0
        C1 = stats1.correlation(fg, params.ridge)
        C2 = stats2.correlation(~fg, params.ridge)
        for name, C in (("foreground", C1), ("background", C2)):
            if C is None:
                msg = f"{name} region is empty; using identity correlation"
                log.warning(msg)
                if warnings_out is not None:
                    warnings_out.append(msg)
        fid1 = mahalanobis_diag(R1[band].T, C1 or fallback)
        fid2 = mahalanobis_diag(R2[band].T, C2 or fallback)
        return force_field(kappa, fid1, fid2, params.mu, params.nu)

    return _run(phi, params, force, accelerate, on_step)


def evolve(image, D1, D2, params=None, rho=8, accelerate=None):
    """Segment ``image`` with the two class dictionaries.

    Returns ``(mask, trace)`` with ``mask = phi > 0``.
    """
    img = as_image(image)
    params = params or SegParams()
    H, W = img.shape[:2]
    if params.max_steps == 0:
        phi = init_phi_checkerboard(W, H, params.radius, params.spacing)
        return phi > 0, []
    E1, E2, _ = fidelity_fields(img, D1, D2, rho, accelerate=accelerate)
    phi, trace, _ = evolve_fields(E1, E2, (H, W), params, accelerate=accelerate)
    return phi > 0, trace


def _region_means(I, fg):
    """Per-channel means of ``I`` (``N x C``) over ``fg`` and its complement.

    An empty region falls back to the global mean.
    """
    glob = I.mean(axis=0)
    c1 = I[fg].mean(axis=0) if fg.any() else glob
    c2 = I[~fg].mean(axis=0) if (~fg).any() else glob
    return c1, c2


def _cv_channels(image, mode):
    img = as_image(image)
    if mode == "a-star":
        img = lab_a_channel(img)
    elif mode == "scalar":
        if img.shape[2] != 1:
            raise ValueError("scalar mode needs a single-channel image")
    elif mode != "vector":
        raise ValueError(f"unknown Chan-Vese mode {mode!r}")
    return img


def baseline_cv_force(image, phi, lam1=1.0, lam2=1.0, mu=0.0, nu=0.0, mode="vector", band=None):
    """Chan-Vese force ``mu*kappa - nu - lam1|I-c1|^2 + lam2|I-c2|^2``.

    ``mode`` is ``"scalar"`` (one channel), ``"vector"`` (squared distances
    summed over channels) or ``"a-star"`` (CIELAB a* of an RGB image).
    Returns the force on ``band`` (flat indices) or over the whole image.
    """
    img = _cv_channels(image, mode)
    phi = np.asarray(phi, dtype=np.float64)
    H, W, C = img.shape
    I = img.reshape(-1, C)
    fg = phi.reshape(-1) > 0
    c1, c2 = _region_means(I, fg)
    if band is None:
        band = np.arange(H * W)
    rows, cols = np.divmod(band, W)
    kappa = curvature_field(phi, rows, cols)
    Ib = I[band]
    d1 = np.sum((Ib - c1) ** 2, axis=1)
    d2 = np.sum((Ib - c2) ** 2, axis=1)
    return mu * kappa - nu - lam1 * d1 + lam2 * d2


def evolve_chan_vese(image, params=None, lam1=1.0, lam2=1.0, mode="vector", accelerate=None):
    """Baseline Chan-Vese segmentation with the same narrow-band machinery.

    Intensities are multiplied by ``params.intensity_scale`` so that ``mu``
    and ``nu`` have the same meaning as for Level-set KSVD.
    Returns ``(mask, trace)``.
    """
    params = params or SegParams()
    img = _cv_channels(image, mode) * params.intensity_scale
    H, W, C = img.shape
    I = img.reshape(-1, C)
    phi = init_phi_checkerboard(W, H, params.radius, params.spacing)

    def force(flat, band, kappa):
        c1, c2 = _region_means(I, flat > 0)
        Ib = I[band]
        d1 = np.sum((Ib - c1) ** 2, axis=1)
        d2 = np.sum((Ib - c2) ** 2, axis=1)
        return params.mu * kappa - params.nu - lam1 * d1 + lam2 * d2

    phi, trace, _ = _run(phi, params, force, accelerate)
    return phi > 0, trace
