"""Histogram-domain illuminant localization.

Learned 2D filters are convolved against the chroma histogram channels; a
softmax over bias + summed responses yields a probability map ("heat map")
on the (u, v) grid, and its coordinate expectation is the illuminant
estimate.  Because a global per-channel gain translates the histogram, a
single filter bank localizes the illuminant for any shift: estimation is a
sliding-window search in chroma space.

Convolution here is linear (non-circular), same-size, zero-padded, with the
kernel anchored at (n//2, n//2):

    out[i, j] = sum_{p, q} x[i + c - p, j + c - q] * k[p, q],  c = n // 2

"fft" and "direct" modes compute the same thing; direct is the slow
obviously-correct reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .histograms import ChromaHistogram, HistogramConfig

__all__ = [
    "CCCParams",
    "convolve2d",
    "evaluate_ccc",
    "soft_argmax",
    "uv_to_rgb",
    "estimate_illuminant",
]


@dataclass
class CCCParams:
    """Per-image localization parameters emitted by the hypernetwork.

    bias: (n, n) log-prior over illuminant locations.
    filters: (2, n, n), one filter per histogram channel.
    gain: optional (n, n) multiplier on the summed filter responses.
    """

    bias: np.ndarray
    filters: np.ndarray
    gain: np.ndarray = None

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.filters = np.asarray(self.filters, dtype=np.float64)
        n = self.bias.shape[0]
        if self.bias.shape != (n, n):
            raise ValueError(f"bias must be square, got {self.bias.shape}")
        if self.filters.shape != (2, n, n):
            raise ValueError(
                f"filters must be (2, {n}, {n}), got {self.filters.shape}")
        if self.gain is not None:
            self.gain = np.asarray(self.gain, dtype=np.float64)
            if self.gain.shape != (n, n):
                raise ValueError(
                    f"gain must be ({n}, {n}), got {self.gain.shape}")

    @property
    def n(self) -> int:
        return self.bias.shape[0]


def _conv_same_fft(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Same-size linear convolution via zero-padded FFT, batched over
    leading axes.  x and k must share their trailing (n, n) shape."""
    n = x.shape[-1]
    c = n // 2
    s = 2 * n  # >= 2n-1, keeps FFT sizes fast and the linear conv alias-free
    fx = np.fft.rfft2(x, s=(s, s))
    fk = np.fft.rfft2(k, s=(s, s))
    full = np.fft.irfft2(fx * fk, s=(s, s))
    return full[..., c:c + n, c:c + n]


def _conv_same_direct(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Reference same-size linear convolution: explicit shift-and-add over
    every kernel tap, zero padding outside the input."""
    n = x.shape[-1]
    c = n // 2
    out = np.zeros_like(x)
    for p in range(n):
        for q in range(n):
            w = k[..., p, q]
            if np.all(w == 0.0):
                continue
            # out[i, j] += x[i + c - p, j + c - q] * w  where indices hit x
            di, dj = c - p, c - q
            si0, si1 = max(0, -di), min(n, n - di)
            sj0, sj1 = max(0, -dj), min(n, n - dj)
            if si0 >= si1 or sj0 >= sj1:
                continue
            out[..., si0:si1, sj0:sj1] += (
                x[..., si0 + di:si1 + di, sj0 + dj:sj1 + dj]
                * (w[..., None, None] if np.ndim(w) else w))
    return out


def convolve2d(x: np.ndarray, k: np.ndarray, mode: str = "fft") -> np.ndarray:
    """Same-size linear convolution of two equally sized square arrays."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if x.shape[-2:] != k.shape[-2:] or x.shape[-1] != x.shape[-2]:
        raise ValueError(f"need matching square arrays, got {x.shape} vs {k.shape}")
    if mode == "fft":
        return _conv_same_fft(x, k)
    if mode == "direct":
        return _conv_same_direct(x, k)
    raise ValueError(f"unknown mode {mode!r}")


def softmax2d(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the trailing two axes."""
    z = logits - logits.max(axis=(-2, -1), keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=(-2, -1), keepdims=True)


def evaluate_ccc(stack, params: CCCParams, mode: str = "fft") -> np.ndarray:
    """Heat map P = softmax(bias + [gain *] sum_i conv(N_i, F_i)).

    stack may be a ChromaHistogram or an (n, n, 4) / (4, n, n) array; only
    channels 0-1 (the two histograms) are convolved.
    """
    hists = _histogram_channels(stack, params.n)
    resp = convolve2d(hists[0], params.filters[0], mode)
    resp += convolve2d(hists[1], params.filters[1], mode)
    if params.gain is not None:
        resp *= params.gain
    return softmax2d(params.bias + resp)


def _histogram_channels(stack, n: int) -> np.ndarray:
    if isinstance(stack, ChromaHistogram):
        data = stack.channel_first()
    else:
        data = np.asarray(stack, dtype=np.float64)
        if data.shape == (n, n, 4):
            data = data.transpose(2, 0, 1)
    if data.shape != (4, n, n):
        raise ValueError(f"expected a 4-channel {n}x{n} stack, got {data.shape}")
    return data[:2]


def soft_argmax(p: np.ndarray, config: HistogramConfig) -> tuple[float, float]:
    """Expected (u, v) under a probability map on the bin-center grid."""
    p = np.asarray(p, dtype=np.float64)
    c = config.centers()
    u = float((p * c[None, :]).sum())
    v = float((p * c[:, None]).sum())
    return u, v


def uv_to_rgb(u, v) -> np.ndarray:
    """Unit-norm RGB direction for log-chroma coordinates.

    ell = (e^-u, 1, e^-v) / z with z the Euclidean norm; broadcasts over
    array-shaped u, v and stacks RGB on the last axis.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    a = np.exp(-u)
    b = np.exp(-v)
    z = np.sqrt(a * a + b * b + 1.0)
    return np.stack([a / z, np.ones_like(z) / z, b / z], axis=-1)


def estimate_illuminant(stack, params: CCCParams,
                        config: HistogramConfig = HistogramConfig(),
                        mode: str = "fft"):
    """Full evaluator: returns (unit illuminant RGB, heat map)."""
    p = evaluate_ccc(stack, params, mode)
    u, v = soft_argmax(p, config)
    return uv_to_rgb(u, v), p
