"""Train / validate / segment / compare workflows used by the CLI."""

import dataclasses
import logging
import os
import time
from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from lsksvd.classify import classify_patches, format_roc, roc_curve
from lsksvd.errors import approximation_errors, correlation_matrix, fidelity_fields
from lsksvd.imaging import (
    as_mask,
    build_dataset,
    read_image,
    read_mask,
    render_overlay,
    write_image,
    write_mask,
)
from lsksvd.levelset import (
    SegParams,
    evolve_chan_vese,
    evolve_fields,
    format_trace,
    init_phi_checkerboard,
)
from lsksvd.sparse import TrainConfig, batch_omp, ksvd_train, load_dictionary, save_dictionary

__all__ = [
    "PipelineConfig",
    "load_config",
    "SegmentationReport",
    "post_process",
    "compute_iou",
    "cmd_train",
    "cmd_validate",
    "cmd_segment",
    "cmd_compare",
]

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    patch_size: int = 8
    channels: int = 3
    K: int = 128
    rho: int = 8
    ksvd_iterations: int = 30
    stride: int = 0  # 0 -> patch_size // 2
    balance: bool = True
    split_ratio: float = 0.7
    mu: float = 25.0
    nu: float = 35.0
    tau: float = 0.0  # 0 -> radius
    radius: float = 3.0
    spacing: float = 15.0
    eps_h: float = 1.0
    d: float = 0.005
    patience: int = 5
    reinit_every: int = 5
    reinit_sweeps: int = 10
    ridge: float = 1e-3
    intensity_scale: float = 255.0
    kappa_max: float = 1.0
    max_steps: int = 1000
    seed: int = 0
    min_segment_area: int = 25
    metric: str = "correlation"
    min_auc: float = 0.9
    cv_lambda1: float = 1.0
    cv_lambda2: float = 1.0

    def __post_init__(self):
        for name in ("patch_size", "channels", "K", "rho", "ksvd_iterations", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.min_segment_area < 0 or self.max_steps < 0:
            raise ValueError("min_segment_area and max_steps must be >= 0")
        if self.metric not in ("correlation", "l2"):
            raise ValueError("metric must be 'correlation' or 'l2'")

    def train_config(self):
        return TrainConfig(K=self.K, rho=self.rho, iterations=self.ksvd_iterations, seed=self.seed)

    def seg_params(self):
        return SegParams(
            mu=self.mu,
            nu=self.nu,
            tau=self.tau or None,
            eps_h=self.eps_h,
            d=self.d,
            patience=self.patience,
            max_steps=self.max_steps,
            radius=self.radius,
            spacing=self.spacing,
            reinit_every=self.reinit_every,
            reinit_sweeps=self.reinit_sweeps,
            ridge=self.ridge,
            intensity_scale=self.intensity_scale,
            kappa_max=self.kappa_max,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self):
        return dataclasses.asdict(self)


def _parse_value(raw, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return type(default)(raw.strip())


def load_config(path=None, **overrides):
    """Read a flat ``key = value`` file (``#`` comments) and apply overrides."""
    defaults = PipelineConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(PipelineConfig)}
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in known:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _parse_value(raw, known[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def post_process(mask, min_segment_area=25):
    """Drop 4-connected foreground components smaller than ``min_segment_area``."""
    m = as_mask(mask)
    if min_segment_area < 0:
        raise ValueError("min_segment_area must be >= 0")
    if min_segment_area == 0 or not m.any():
        return m.copy()
    labels, n = ndimage.label(m)  # default structure is 4-connectivity
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= min_segment_area
    keep[0] = False
    return keep[labels]


def compute_iou(a, b):
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


@dataclass
class SegmentationReport:
    mask_path: str
    overlay_path: str
    trace_path: str
    steps: int
    converged: bool
    wall_time: float
    iou: float | None = None
    warnings: int = 0

    def to_text(self):
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _dataset(config, image_path, fg_mask_path, bg_mask_path):
    image = read_image(image_path)
    if image.shape[2] != config.channels:
        raise ValueError(f"image has {image.shape[2]} channels, config expects {config.channels}")
    fg = read_mask(fg_mask_path)
    bg = read_mask(bg_mask_path)
    return build_dataset(
        image,
        fg,
        bg,
        patch_size=config.patch_size,
        stride=config.stride or None,
        balance=config.balance,
        split_ratio=config.split_ratio,
        seed=config.seed,
    )


def cmd_train(image_path, fg_mask_path, bg_mask_path, out_dir, config=None):
    """Learn foreground (``dict1.json``) and background (``dict2.json``) dictionaries.

    Returns a summary dict with the dictionary paths and per-class counts.
    """
    config = config or PipelineConfig()
    ds = _dataset(config, image_path, fg_mask_path, bg_mask_path)
    os.makedirs(out_dir, exist_ok=True)
    counts = ds.counts()
    paths = {}
    for label in (1, 2):
        D, _ = ksvd_train(
            ds.class_patches(label, "train"),
            config.train_config(),
            patch_size=config.patch_size,
            channels=config.channels,
        )
        path = os.path.join(out_dir, f"dict{label}.json")
        save_dictionary(path, D, extra=config.to_dict())
        paths[label] = path
    summary_path = os.path.join(out_dir, "dataset.txt")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"candidates_1 = {ds.candidates[1]}\ncandidates_2 = {ds.candidates[2]}\n")
        for key, value in counts.items():
            fh.write(f"{key} = {value}\n")
    return {"dict1": paths[1], "dict2": paths[2], "summary": summary_path, **counts}


def _class_correlations(ds, D1, D2, config):
    """Correlation matrices of each class's training errors under its own dictionary."""
    X1 = ds.class_patches(1, "train")
    X2 = ds.class_patches(2, "train")
    E1 = approximation_errors(X1, D1, batch_omp(D1, X1, config.rho))
    E2 = approximation_errors(X2, D2, batch_omp(D2, X2, config.rho))
    return correlation_matrix(E1, config.ridge), correlation_matrix(E2, config.ridge)


def cmd_validate(dict1_path, dict2_path, image_path, fg_mask_path, bg_mask_path, config=None, roc_path=None):
    """Score the held-out test patches and compute the ROC.

    The dataset is rebuilt with the configured seed, so the test split is the
    one left out by :func:`cmd_train`. Returns ``(roc, passed)`` where
    ``passed`` means ``auc >= min_auc``.
    """
    config = config or PipelineConfig()
    D1 = load_dictionary(dict1_path)
    D2 = load_dictionary(dict2_path)
    ds = _dataset(config, image_path, fg_mask_path, bg_mask_path)
    if len(np.unique(ds.test_y)) < 2:
        raise ValueError("test split contains a single class")
    C1, C2 = _class_correlations(ds, D1, D2, config) if config.metric == "correlation" else (None, None)
    _, scores = classify_patches(ds.test_X, D1, D2, C1, C2, config.rho, config.metric)
    roc = roc_curve(scores, ds.test_y)
    if roc_path is not None:
        with open(roc_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_roc(roc))
    return roc, roc.auc >= config.min_auc


def _load_pair(dict1_path, dict2_path, image, config):
    D1 = load_dictionary(dict1_path)
    D2 = load_dictionary(dict2_path)
    if not D1.same_geometry(D2):
        raise ValueError("dictionaries have different patch geometry")
    if D1.channels is not None and D1.channels != image.shape[2]:
        raise ValueError(f"dictionaries expect {D1.channels} channels, image has {image.shape[2]}")
    return D1, D2


def _segment_ksvd(image, D1, D2, config, warnings_out=None):
    H, W = image.shape[:2]
    params = config.seg_params()
    if params.max_steps == 0:
        phi = init_phi_checkerboard(W, H, params.radius, params.spacing)
        return phi > 0, [], False
    E1, E2, _ = fidelity_fields(image, D1, D2, config.rho)
    phi, trace, converged = evolve_fields(E1, E2, (H, W), params, warnings_out=warnings_out)
    return phi > 0, trace, converged


def cmd_segment(image_path, dict1_path, dict2_path, out_dir, config=None, gt_mask_path=None):
    """Segment one image and write ``mask.png``, ``overlay.png``, ``trace.txt``, ``report.txt``."""
    config = config or PipelineConfig()
    t0 = time.perf_counter()
    image = read_image(image_path)
    D1, D2 = _load_pair(dict1_path, dict2_path, image, config)
    warn = []
    raw, trace, converged = _segment_ksvd(image, D1, D2, config, warn)
    mask = post_process(raw, config.min_segment_area) if config.max_steps > 0 else raw
    if not converged and config.max_steps > 0:
        log.warning("no convergence within max_steps=%d", config.max_steps)

    os.makedirs(out_dir, exist_ok=True)
    mask_path = os.path.join(out_dir, "mask.png")
    overlay_path = os.path.join(out_dir, "overlay.png")
    trace_path = os.path.join(out_dir, "trace.txt")
    write_mask(mask_path, mask)
    write_image(overlay_path, render_overlay(image, mask))
    with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trace(trace))
    iou = None
    if gt_mask_path is not None:
        iou = compute_iou(mask, read_mask(gt_mask_path))
    report = SegmentationReport(
        mask_path=mask_path,
        overlay_path=overlay_path,
        trace_path=trace_path,
        steps=len(trace),
        converged=converged,
        wall_time=time.perf_counter() - t0,
        iou=iou,
        warnings=len(warn),
    )
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text())
    return report


COMPARE_METHODS = ("level-set-ksvd", "chan-vese-vector", "chan-vese-a-star")


def cmd_compare(image_path, dict1_path, dict2_path, out_dir, gt_mask_path, config=None):
    """Level-set KSVD against vector-valued and a*-channel Chan-Vese.

    Writes ``overlay_<method>.png``, ``mask_<method>.png`` and ``compare.txt``;
    returns ``{method: iou}``.
    """
    config = config or PipelineConfig()
    image = read_image(image_path)
    gt = read_mask(gt_mask_path)
    D1, D2 = _load_pair(dict1_path, dict2_path, image, config)
    params = config.seg_params()
    masks = {}
    masks["level-set-ksvd"], _, _ = _segment_ksvd(image, D1, D2, config)
    lam = dict(lam1=config.cv_lambda1, lam2=config.cv_lambda2)
    masks["chan-vese-vector"], _ = evolve_chan_vese(image, params, mode="vector", **lam)
    if image.shape[2] == 3:
        masks["chan-vese-a-star"], _ = evolve_chan_vese(image, params, mode="a-star", **lam)
    else:
        masks["chan-vese-a-star"], _ = evolve_chan_vese(image, params, mode="scalar", **lam)

    os.makedirs(out_dir, exist_ok=True)
    table = {}
    for method in COMPARE_METHODS:
        mask = post_process(masks[method], config.min_segment_area)
        table[method] = compute_iou(mask, gt)
        write_mask(os.path.join(out_dir, f"mask_{method}.png"), mask)
        write_image(os.path.join(out_dir, f"overlay_{method}.png"), render_overlay(image, mask))
    with open(os.path.join(out_dir, "compare.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method iou\n")
        for method, value in table.items():
            fh.write(f"{method} {value!r}\n")
    return table
