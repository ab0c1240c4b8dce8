"""Log-chroma image features.

An RGB pixel c = (r, g, b) with strictly positive components maps to two
chroma coordinates that discard absolute intensity:

    u = log(g / r),  v = log(g / b)

An image is summarized as an n x n histogram over (u, v).  Channel 0 bins
pixel colors weighted by pixel brightness ||c||_2, channel 1 bins gradient
colors weighted by gradient magnitude, and channels 2-3 are fixed coordinate
planes holding the bin-center u and v values.  Rows index v, columns index u.

Bins partition [-bound, bound) half-open: bin i covers
[lo + i*eps, lo + (i+1)*eps), so every in-range value lands in exactly one
bin and u == +bound falls outside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmptyHistogramError",
    "HistogramConfig",
    "RawImage",
    "ChromaHistogram",
    "compute_uv",
    "pixel_uv",
    "build_histogram",
    "assemble_feature_stack",
    "bilinear_resize",
]


class EmptyHistogramError(ValueError):
    """No valid pixel survived masking/positivity checks."""


@dataclass(frozen=True)
class HistogramConfig:
    """Geometry of the log-chroma histogram.

    n is the number of bins per axis, bound the half-width of the square
    domain [-bound, bound) along both u and v.
    """

    n: int = 64
    bound: float = 2.85

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not (self.bound > 0):
            raise ValueError(f"bound must be positive, got {self.bound}")

    @property
    def bin_width(self) -> float:
        return 2.0 * self.bound / self.n

    @property
    def lo(self) -> float:
        return -self.bound

    def centers(self) -> np.ndarray:
        """Bin-center coordinates, shape (n,)."""
        i = np.arange(self.n, dtype=np.float64)
        return self.lo + (i + 0.5) * self.bin_width

    def bin_index(self, x) -> np.ndarray:
        """Half-open bin index of coordinate x; may fall outside [0, n)."""
        return np.floor((np.asarray(x, dtype=np.float64) - self.lo)
                        / self.bin_width).astype(np.int64)


@dataclass
class RawImage:
    """Linear raw image, (H, W, 3) float64, plus a boolean valid-pixel mask.

    Pixel values must be finite and non-negative; zero-valued components are
    legal but such pixels are dropped from chroma statistics.
    """

    pixels: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixels must be finite")
        if np.any(self.pixels < 0):
            raise ValueError("pixels must be non-negative")
        if self.mask is None:
            self.mask = np.ones(self.pixels.shape[:2], dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.pixels.shape[:2]:
                raise ValueError(
                    f"mask shape {self.mask.shape} does not match image "
                    f"{self.pixels.shape[:2]}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class ChromaHistogram:
    """Feature stack over the (u, v) grid, shape (n, n, 4).

    Channels: 0 pixel histogram, 1 gradient histogram, 2 u-coordinate plane
    (constant along rows), 3 v-coordinate plane (constant along columns).
    """

    data: np.ndarray
    config: HistogramConfig = field(default_factory=HistogramConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        n = self.config.n
        if self.data.shape != (n, n, 4):
            raise ValueError(f"expected ({n}, {n}, 4), got {self.data.shape}")

    def channel_first(self) -> np.ndarray:
        """(4, n, n) view for channel-first consumers."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))


def compute_uv(pixel) -> tuple[float, float]:
    """Log-chroma coordinates of one RGB pixel.

    Raises ValueError when any component is <= 0 (callers treat this as a
    rejected pixel).
    """
    r, g, b = (float(c) for c in pixel)
    if r <= 0 or g <= 0 or b <= 0:
        raise ValueError(f"pixel components must be positive, got {(r, g, b)}")
    return math.log(g / r), math.log(g / b)


def pixel_uv(pixels: np.ndarray):
    """Vectorized log-chroma for an (N, 3) pixel array.

    Returns (u, v, valid) where valid marks rows with all components > 0;
    u, v are NaN on invalid rows.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    valid = np.all(pixels > 0, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(pixels > 0, np.log(np.where(pixels > 0, pixels, 1.0)),
                        np.nan)
    u = logp[..., 1] - logp[..., 0]
    v = logp[..., 1] - logp[..., 2]
    return u, v, valid


def _gradient_triplets(image: RawImage):
    """Per-pixel gradient-magnitude triplets of the log image.

    For each channel the magnitude is |forward diff along x| + |forward diff
    along y| of log(channel); entries touching masked-out, non-positive, or
    border pixels come out NaN.  Returns (m, valid) with m of shape (H, W, 3).
    """
    px = image.pixels
    ok = image.mask[..., None] & (px > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(ok, np.log(np.where(ok, px, 1.0)), np.nan)
    h, w, _ = px.shape
    dx = np.full_like(logp, np.nan)
    dy = np.full_like(logp, np.nan)
    dx[:, : w - 1, :] = np.abs(logp[:, 1:, :] - logp[:, : w - 1, :])
    dy[: h - 1, :, :] = np.abs(logp[1:, :, :] - logp[: h - 1, :, :])
    m = dx + dy
    valid = np.all(np.isfinite(m), axis=-1) & np.all(m > 0, axis=-1)
    return m, valid


def build_histogram(image: RawImage, config: HistogramConfig = HistogramConfig(),
                    source: str = "pixels", normalize: bool = True) -> np.ndarray:
    """Histogram one chroma channel of an image onto the (v, u) grid.

    source selects "pixels" (brightness-weighted pixel chroma) or
    "gradients" (gradient-magnitude-weighted gradient chroma).  With
    normalize the result sums to 1.  A pixel contributes iff it is masked-in,
    its components are positive, and its (u, v) falls inside the half-open
    domain.

    Raises EmptyHistogramError when source == "pixels" and nothing survives;
    an image with no valid gradients (e.g. constant) yields an all-zero
    gradient histogram instead, since flatness is informative there.
    """
    if source == "pixels":
        vals = image.pixels.reshape(-1, 3)
        keep = image.mask.reshape(-1)
        u, v, pos = pixel_uv(vals)
        valid = keep & pos
        weights = np.linalg.norm(vals, axis=-1)
    elif source == "gradients":
        m, valid2d = _gradient_triplets(image)
        valid = valid2d.reshape(-1)
        # NaN/zero triplets are already invalid; placeholder 1s keep log quiet
        safe = np.where(valid2d[..., None], m, 1.0).reshape(-1, 3)
        u, v, _ = pixel_uv(safe)
        weights = np.linalg.norm(safe, axis=-1)
        vals = safe
    else:
        raise ValueError(f"unknown source {source!r}")

    cfg = config
    iu = np.zeros(len(vals), dtype=np.int64)
    iv = np.zeros(len(vals), dtype=np.int64)
    iu[valid] = cfg.bin_index(u[valid])
    iv[valid] = cfg.bin_index(v[valid])
    inside = valid & (iu >= 0) & (iu < cfg.n) & (iv >= 0) & (iv < cfg.n)

    hist = np.zeros((cfg.n, cfg.n), dtype=np.float64)
    np.add.at(hist, (iv[inside], iu[inside]), weights[inside])
    total = hist.sum()
    if total == 0.0:
        if source == "pixels":
            raise EmptyHistogramError("no valid pixels to histogram")
        return hist
    if normalize:
        hist /= total
    return hist


def assemble_feature_stack(image: RawImage,
                           config: HistogramConfig = HistogramConfig()
                           ) -> ChromaHistogram:
    """Full 4-channel network input for one image."""
    n = config.n
    data = np.zeros((n, n, 4), dtype=np.float64)
    data[:, :, 0] = build_histogram(image, config, source="pixels")
    data[:, :, 1] = build_histogram(image, config, source="gradients")
    c = config.centers()
    data[:, :, 2] = c[None, :]   # u varies along columns
    data[:, :, 3] = c[:, None]   # v varies along rows
    return ChromaHistogram(data, config)


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (H, W) or (H, W, C) data with half-pixel-aligned bilinear
    sampling, edges clamped."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size ({out_h}, {out_w})")
    h, w = pixels.shape[:2]

    def axis_weights(size, out_size):
        src = (np.arange(out_size) + 0.5) * size / out_size - 0.5
        i0 = np.clip(np.floor(src).astype(np.int64), 0, size - 1)
        i1 = np.minimum(i0 + 1, size - 1)
        frac = np.clip(src - i0, 0.0, 1.0)
        return i0, i1, frac

    r0, r1, fr = axis_weights(h, out_h)
    c0, c1, fc = axis_weights(w, out_w)
    fr = fr.reshape(-1, 1) if pixels.ndim == 2 else fr.reshape(-1, 1, 1)
    fc = fc.reshape(1, -1) if pixels.ndim == 2 else fc.reshape(1, -1, 1)
    top = pixels[r0][:, c0] * (1 - fc) + pixels[r0][:, c1] * fc
    bot = pixels[r1][:, c0] * (1 - fc) + pixels[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr
