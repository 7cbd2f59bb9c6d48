"""Image/mask I/O, patch extraction, annotated datasets, CIELAB a*, overlays.

Images are ``float64`` arrays of shape ``(H, W, C)`` with values in [0, 1];
masks are boolean arrays of shape ``(H, W)``. Pixel coordinates are ``(x, y)``
with ``x`` the column and ``y`` the row.

Patch vectors are laid out channel-major, then row-major within a channel, so
``k = s * s * c``. For even patch sizes the "center" is the top-left pixel of
the central 2x2 block. Samples outside the image are mirrored with the edge
pixel repeated (``numpy.pad(..., mode="symmetric")``).
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

__all__ = [
    "as_image",
    "as_mask",
    "read_image",
    "write_image",
    "read_mask",
    "write_mask",
    "patch_offsets",
    "extract_patch",
    "extract_all_patches",
    "Dataset",
    "build_dataset",
    "srgb_to_lab",
    "lab_a_channel",
    "render_overlay",
]

YELLOW = (1.0, 1.0, 0.0)


def as_image(data):
    """Validate and normalise an image to ``(H, W, C)`` float64."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("image must be non-empty")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def as_mask(data, shape=None):
    mask = np.asarray(data).astype(bool)
    if mask.ndim == 3 and mask.shape[2] == 1:
        mask = mask[:, :, 0]
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape[:2]):
        raise ValueError(f"mask shape {mask.shape} does not match image {tuple(shape[:2])}")
    return mask


def _to_uint8(values):
    # round half-up
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_image(path):
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return as_image(arr / 255.0)


def write_image(path, image):
    img = as_image(image)
    u8 = _to_uint8(img)
    if u8.shape[2] == 1:
        Image.fromarray(u8[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def read_mask(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr != 0


def write_mask(path, mask):
    m = as_mask(mask)
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def patch_offsets(patch_size):
    """Return ``(before, after)`` so the window spans ``[c - before, c + after]``."""
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    return (patch_size - 1) // 2, patch_size // 2


def _pad(image, patch_size):
    before, after = patch_offsets(patch_size)
    return np.pad(image, ((before, after), (before, after), (0, 0)), mode="symmetric")


def _vectorize(window):
    # window is (s, s, C) -> channel-major, row-major within channel
    return np.ascontiguousarray(np.transpose(window, (2, 0, 1))).reshape(-1)


def extract_patch(image, center, patch_size):
    """Return the vectorized ``s x s`` window around ``center=(x, y)``."""
    img = as_image(image)
    h, w, _ = img.shape
    x, y = int(center[0]), int(center[1])
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"center {(x, y)} outside image of size {w}x{h}")
    padded = _pad(img, patch_size)
    window = padded[y : y + patch_size, x : x + patch_size, :]
    return _vectorize(window)


def extract_all_patches(image, patch_size, centers=None):
    """Patch matrix of shape ``(k, N)``.

    Without ``centers`` every pixel contributes one column, in row-major pixel
    order (column ``n`` is pixel ``(n % W, n // W)``). ``centers`` is an
    ``(N, 2)`` array of ``(x, y)`` pairs.
    """
    img = as_image(image)
    h, w, c = img.shape
    padded = _pad(img, patch_size)
    # (H, W, C, s, s)
    windows = sliding_window_view(padded, (patch_size, patch_size), axis=(0, 1))
    if centers is None:
        sel = windows.reshape(h * w, c, patch_size, patch_size)
    else:
        centers = np.asarray(centers, dtype=np.intp).reshape(-1, 2)
        if len(centers) and (
            centers[:, 0].min() < 0 or centers[:, 0].max() >= w
            or centers[:, 1].min() < 0 or centers[:, 1].max() >= h
        ):
            raise ValueError("patch center outside image")
        sel = windows[centers[:, 1], centers[:, 0]]
    return np.ascontiguousarray(sel.reshape(sel.shape[0], c * patch_size * patch_size).T)


@dataclass
class Dataset:
    """Labelled patch vectors split into train and test parts.

    Label 1 is the foreground class, label 2 the background class. Patch
    matrices are ``(k, n)``; ``*_centers`` hold the ``(x, y)`` of each column.
    """

    train_X: np.ndarray
    train_y: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray
    train_centers: np.ndarray
    test_centers: np.ndarray
    patch_size: int
    channels: int
    seed: int
    candidates: dict = field(default_factory=dict)

    def class_patches(self, label, part="train"):
        X = self.train_X if part == "train" else self.test_X
        y = self.train_y if part == "train" else self.test_y
        return X[:, y == label]

    def counts(self):
        out = {}
        for part, y in (("train", self.train_y), ("test", self.test_y)):
            for label in (1, 2):
                out[f"{part}_{label}"] = int(np.sum(y == label))
        return out


def _grid_centers(mask, stride):
    ys, xs = np.nonzero(mask)
    keep = (ys % stride == 0) & (xs % stride == 0)
    return np.stack([xs[keep], ys[keep]], axis=1)


def build_dataset(
    image,
    fg_mask,
    bg_mask,
    patch_size=8,
    stride=None,
    balance=True,
    split_ratio=0.7,
    seed=0,
):
    """Extract labelled patches from two annotation masks.

    One patch is taken for every mask pixel lying on the ``stride`` grid. With
    ``balance`` the majority class is randomly under-sampled to 1:1. Each class
    is shuffled and split by ``split_ratio`` separately, so per-class train and
    test counts follow the ratio exactly up to rounding.
    """
    img = as_image(image)
    fg = as_mask(fg_mask, img.shape)
    bg = as_mask(bg_mask, img.shape)
    if np.any(fg & bg):
        raise ValueError("foreground and background masks overlap")
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must be in (0, 1)")
    if stride is None:
        stride = max(1, patch_size // 2)
    if stride < 1:
        raise ValueError("stride must be >= 1")

    rng = np.random.default_rng(seed)
    per_class = {1: _grid_centers(fg, stride), 2: _grid_centers(bg, stride)}
    candidates = {label: len(c) for label, c in per_class.items()}
    for label, cs in per_class.items():
        if len(cs) == 0:
            raise ValueError(f"class {label} has no patches on the stride grid")

    if balance:
        n = min(len(c) for c in per_class.values())
        for label in (1, 2):
            cs = per_class[label]
            if len(cs) > n:
                pick = np.sort(rng.choice(len(cs), size=n, replace=False))
                per_class[label] = cs[pick]

    train_c, train_y, test_c, test_y = [], [], [], []
    for label in (1, 2):
        cs = per_class[label][rng.permutation(len(per_class[label]))]
        n_train = int(np.floor(split_ratio * len(cs) + 0.5))
        train_c.append(cs[:n_train])
        test_c.append(cs[n_train:])
        train_y.append(np.full(n_train, label, dtype=np.int64))
        test_y.append(np.full(len(cs) - n_train, label, dtype=np.int64))

    train_c = np.concatenate(train_c)
    test_c = np.concatenate(test_c)
    train_y = np.concatenate(train_y)
    test_y = np.concatenate(test_y)
    p_tr = rng.permutation(len(train_c))
    p_te = rng.permutation(len(test_c))
    train_c, train_y = train_c[p_tr], train_y[p_tr]
    test_c, test_y = test_c[p_te], test_y[p_te]

    return Dataset(
        train_X=extract_all_patches(img, patch_size, train_c),
        train_y=train_y,
        test_X=extract_all_patches(img, patch_size, test_c),
        test_y=test_y,
        train_centers=train_c,
        test_centers=test_c,
        patch_size=patch_size,
        channels=img.shape[2],
        seed=seed,
        candidates=candidates,
    )


# sRGB (IEC 61966-2-1) linear RGB -> XYZ, and the D65 reference white.
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0


def srgb_to_lab(rgb):
    """CIE 1976 L*a*b* of sRGB values in [0, 1] (last axis = channel)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T / _D65
    f = np.where(
        xyz > _DELTA**3,
        np.cbrt(xyz),
        xyz / (3.0 * _DELTA**2) + 4.0 / 29.0,
    )
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_a_channel(image):
    """a* channel of an RGB image, min-max rescaled to [0, 1].

    A constant a* image maps to 0.5.
    """
    img = as_image(image)
    if img.shape[2] != 3:
        raise ValueError("lab_a_channel needs a 3-channel RGB image")
    a = srgb_to_lab(img)[..., 1]
    lo, hi = a.min(), a.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        out = np.full_like(a, 0.5)
    else:
        out = (a - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)[:, :, None]


def inner_boundary(mask):
    """Mask pixels with at least one 4-neighbour outside the mask or image."""
    m = as_mask(mask)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def render_overlay(image, mask, color=YELLOW):
    img = as_image(image)
    m = as_mask(mask)
    if m.shape != img.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {img.shape[:2]}")
    out = np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img.copy()
    out[inner_boundary(m)] = color
    return out
