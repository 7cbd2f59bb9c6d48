"""Synthetic two-texture images with exact ground-truth masks.

Both default textures share the same mean colour, so intensity-only region
models cannot tell them apart while patch dictionaries can.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = ["TextureSpec", "Blob", "DEFAULT_FOREGROUND", "DEFAULT_BACKGROUND", "random_blobs", "gen_synthetic"]


@dataclass(frozen=True)
class TextureSpec:
    """A stationary random texture around ``mean``.

    ``kind="stripes"``: a sinusoid of the given ``period`` (pixels) and
    ``angle`` (degrees) with random phase. ``kind="blotch"``: white noise
    smoothed with a Gaussian of width ``sigma`` and rescaled to unit variance.
    The scalar pattern is multiplied by ``amplitude * color`` and added to the
    mean, then ``noise`` standard deviation of i.i.d. Gaussian noise is added.
    """

    kind: str = "stripes"
    mean: tuple = (0.5, 0.5, 0.5)
    color: tuple = (1.0, -0.5, -0.5)
    amplitude: float = 0.2
    period: float = 6.0
    angle: float = 45.0
    sigma: float = 1.5
    noise: float = 0.02

    def render(self, height, width, rng):
        y, x = np.mgrid[0:height, 0:width].astype(np.float64)
        if self.kind == "stripes":
            theta = np.deg2rad(self.angle)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            pattern = np.sin(2.0 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / self.period + phase)
            pattern *= np.sqrt(2.0)
        elif self.kind == "blotch":
            pattern = ndimage.gaussian_filter(rng.standard_normal((height, width)), self.sigma, mode="wrap")
            pattern = (pattern - pattern.mean()) / max(pattern.std(), 1e-12)
        elif self.kind == "flat":
            pattern = np.zeros((height, width))
        else:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        color = np.asarray(self.color, dtype=np.float64)
        mean = np.asarray(self.mean, dtype=np.float64)
        img = mean + self.amplitude * pattern[:, :, None] * color
        if self.noise > 0:
            img = img + self.noise * rng.standard_normal(img.shape)
        return img


DEFAULT_FOREGROUND = TextureSpec(kind="stripes", color=(0.8, -0.4, -0.4), amplitude=0.25, period=6.0, angle=45.0)
DEFAULT_BACKGROUND = TextureSpec(kind="blotch", color=(-0.4, 0.8, -0.4), amplitude=0.25, sigma=1.5)


@dataclass(frozen=True)
class Blob:
    """Axis-aligned ellipse centred at ``(x, y)``."""

    x: float
    y: float
    rx: float
    ry: float = field(default=None)

    def mask(self, height, width):
        ry = self.rx if self.ry is None else self.ry
        yy, xx = np.mgrid[0:height, 0:width]
        return ((xx - self.x) / self.rx) ** 2 + ((yy - self.y) / ry) ** 2 <= 1.0


def random_blobs(width, height, count, rng, min_radius=20.0, max_radius=45.0, gap=10.0, attempts=2000):
    """Place ``count`` non-overlapping disks fully inside the image."""
    blobs = []
    for _ in range(count):
        for _ in range(attempts):
            r = rng.uniform(min_radius, max_radius)
            if 2 * r >= min(width, height):
                continue
            x = rng.uniform(r, width - 1 - r)
            y = rng.uniform(r, height - 1 - r)
            if all(np.hypot(x - b.x, y - b.y) >= r + b.rx + gap for b in blobs):
                blobs.append(Blob(x, y, r))
                break
        else:
            raise ValueError(f"could not place {count} non-overlapping blobs in {width}x{height}")
    return blobs


def gen_synthetic(
    width=256,
    height=256,
    fg_texture=DEFAULT_FOREGROUND,
    bg_texture=DEFAULT_BACKGROUND,
    blobs=3,
    seed=0,
    blur=0.0,
):
    """Render a background texture with foreground-texture blobs pasted in.

    ``blobs`` is either a count (random non-overlapping disks) or a list of
    :class:`Blob`. Returns ``(image, fg_mask)``; the background mask is the
    complement.
    """
    if width < 1 or height < 1:
        raise ValueError("width and height must be >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(blobs, int):
        blobs = random_blobs(width, height, blobs, rng) if blobs > 0 else []
    fg = np.zeros((height, width), dtype=bool)
    for b in blobs:
        ry = b.rx if b.ry is None else b.ry
        if b.x - b.rx < 0 or b.x + b.rx > width - 1 or b.y - ry < 0 or b.y + ry > height - 1:
            raise ValueError(f"blob {b} is not inside the {width}x{height} image")
        fg |= b.mask(height, width)
    bg_img = bg_texture.render(height, width, rng)
    fg_img = fg_texture.render(height, width, rng)
    img = np.where(fg[:, :, None], fg_img, bg_img)
    if blur > 0:
        img = ndimage.gaussian_filter(img, sigma=(blur, blur, 0), mode="reflect")
    return np.clip(img, 0.0, 1.0), fg
