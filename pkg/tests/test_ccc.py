"""CCC evaluator tests.

The direct convolution mode is the reference; frozen expectations below are
hand-derived from out[i,j] = sum x[i+c-p, j+c-q] k[p,q] with c = n//2.
"""

import math

import numpy as np
import pytest

from chromacc.ccc import (
    CCCParams,
    convolve2d,
    estimate_illuminant,
    evaluate_ccc,
    soft_argmax,
    softmax2d,
    uv_to_rgb,
)
from chromacc.histograms import HistogramConfig, compute_uv


def test_center_delta_is_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 8))
    k = np.zeros((8, 8))
    k[4, 4] = 1.0  # anchor (n//2, n//2)
    np.testing.assert_allclose(convolve2d(x, k, "direct"), x, atol=0)
    np.testing.assert_allclose(convolve2d(x, k, "fft"), x, atol=1e-12)


def test_offset_delta_shifts():
    # kernel delta at (c, c+1): out[i, j] = x[i, j-1], zero fill at j=0
    x = np.arange(16.0).reshape(4, 4)
    k = np.zeros((4, 4))
    k[2, 3] = 1.0
    out = convolve2d(x, k, "direct")
    expected = np.zeros_like(x)
    expected[:, 1:] = x[:, :-1]
    np.testing.assert_array_equal(out, expected)


def test_hand_computed_3x3_like_fixture():
    # n=4, c=2.  x has a single 1 at (1, 1); kernel k arbitrary.
    # out[i, j] = k[i + 1, j + 1] wherever that index exists.
    x = np.zeros((4, 4))
    x[1, 1] = 1.0
    k = np.arange(16.0).reshape(4, 4)
    out = convolve2d(x, k, "direct")
    expected = np.zeros((4, 4))
    expected[:3, :3] = k[1:, 1:]
    np.testing.assert_array_equal(out, expected)


def test_fft_matches_direct_random():
    rng = np.random.default_rng(42)
    for n in (4, 8, 16, 32):
        x = rng.normal(size=(n, n))
        k = rng.normal(size=(n, n))
        a = convolve2d(x, k, "fft")
        b = convolve2d(x, k, "direct")
        assert np.max(np.abs(a - b)) < 1e-10


def test_convolution_linearity():
    rng = np.random.default_rng(1)
    x, y, k = rng.normal(size=(3, 16, 16))
    lhs = convolve2d(2.5 * x - 1.5 * y, k, "fft")
    rhs = 2.5 * convolve2d(x, k, "fft") - 1.5 * convolve2d(y, k, "fft")
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_convolve2d_rejects_mismatched():
    with pytest.raises(ValueError):
        convolve2d(np.zeros((4, 4)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        convolve2d(np.zeros((4, 6)), np.zeros((4, 6)))


def test_softmax_properties():
    rng = np.random.default_rng(2)
    logits = rng.normal(scale=5.0, size=(16, 16))
    p = softmax2d(logits)
    assert np.all(p > 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    q = softmax2d(logits + 123.456)  # shift invariance
    np.testing.assert_allclose(p, q, atol=1e-12)


def test_soft_argmax_uniform_and_onehot():
    cfg = HistogramConfig(n=16, bound=2.85)
    p = np.full((16, 16), 1.0 / 256.0)
    u, v = soft_argmax(p, cfg)
    assert abs(u) < 1e-12 and abs(v) < 1e-12

    onehot = np.zeros((16, 16))
    onehot[3, 11] = 1.0  # row -> v bin, column -> u bin
    u, v = soft_argmax(onehot, cfg)
    c = cfg.centers()
    assert u == pytest.approx(c[11], abs=0)
    assert v == pytest.approx(c[3], abs=0)


def test_uv_to_rgb_frozen():
    # u = ln 2, v = 0: (e^-u, 1, e^-v) = (0.5, 1, 1), norm 1.5
    ell = uv_to_rgb(math.log(2.0), 0.0)
    np.testing.assert_allclose(ell, [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0],
                               rtol=1e-15)
    # and a v-shift: u = 0, v = ln 4 -> (1, 1, 0.25), norm sqrt(2.0625)
    ell = uv_to_rgb(0.0, math.log(4.0))
    np.testing.assert_allclose(
        ell, np.array([1.0, 1.0, 0.25]) / math.sqrt(2.0625), rtol=1e-15)


def test_uv_rgb_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        u0, v0 = rng.uniform(-2.85, 2.85, 2)
        ell = uv_to_rgb(u0, v0)
        assert np.linalg.norm(ell) == pytest.approx(1.0, abs=1e-14)
        u1, v1 = compute_uv(ell)
        assert abs(u1 - u0) < 1e-12 and abs(v1 - v0) < 1e-12


def test_matched_filter_localizes_shift():
    # The sliding-window premise, at the level where it is literally true:
    # correlate a translated copy against the flipped template and the
    # response peaks at a position displaced by exactly the translation.
    rng = np.random.default_rng(4)
    n, c = 32, 16
    for _ in range(10):
        a, b = rng.integers(8, 24, size=2)
        template = np.zeros((n, n))
        template[a, b] = 1.0
        dv, du = rng.integers(-5, 6, size=2)
        shifted = np.zeros((n, n))
        shifted[a + dv, b + du] = 1.0
        matched = template[::-1, ::-1]
        for mode in ("fft", "direct"):
            out = convolve2d(shifted, matched, mode)
            peak = np.unravel_index(np.argmax(out), out.shape)
            assert peak == (c - 1 + dv, c - 1 + du)


def test_matched_filter_localizes_patch():
    # Same premise with a dense random template: the autocorrelation peak
    # sits at zero lag, so the conv response peaks at the shift offset.
    rng = np.random.default_rng(5)
    n, c = 32, 16
    template = np.zeros((n, n))
    template[12:18, 10:16] = rng.uniform(0.5, 1.0, (6, 6))
    dv, du = 4, -3
    shifted = np.roll(template, (dv, du), axis=(0, 1))
    out = convolve2d(shifted, template[::-1, ::-1], "fft")
    peak = np.unravel_index(np.argmax(out), out.shape)
    assert peak == (c - 1 + dv, c - 1 + du)


def _stack_with_hist(h0, cfg):
    n = cfg.n
    data = np.zeros((n, n, 4))
    data[:, :, 0] = h0
    cc = cfg.centers()
    data[:, :, 2] = cc[None, :]
    data[:, :, 3] = cc[:, None]
    return data


def test_evaluate_ccc_zero_params_uniform():
    cfg = HistogramConfig(n=16)
    h = np.zeros((16, 16))
    h[5, 7] = 1.0
    stack = _stack_with_hist(h, cfg)
    params = CCCParams(np.zeros((16, 16)), np.zeros((2, 16, 16)))
    p = evaluate_ccc(stack, params)
    np.testing.assert_allclose(p, 1.0 / 256.0, atol=1e-15)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-12)


def test_evaluate_ccc_gain_and_modes():
    cfg = HistogramConfig(n=16)
    rng = np.random.default_rng(6)
    h = rng.uniform(size=(16, 16))
    h /= h.sum()
    stack = _stack_with_hist(h, cfg)
    params = CCCParams(
        bias=rng.normal(size=(16, 16)),
        filters=rng.normal(size=(2, 16, 16)),
        gain=rng.uniform(0.5, 1.5, size=(16, 16)),
    )
    # manual: logits = bias + gain * (conv(h, F0) + conv(0, F1))
    resp = convolve2d(h, params.filters[0], "direct")
    manual = softmax2d(params.bias + params.gain * resp)
    np.testing.assert_allclose(evaluate_ccc(stack, params, "direct"), manual,
                               atol=1e-14)
    np.testing.assert_allclose(evaluate_ccc(stack, params, "fft"), manual,
                               atol=1e-10)


def test_estimate_illuminant_peaked_bias():
    cfg = HistogramConfig(n=32)
    h = np.zeros((32, 32))
    h[0, 0] = 1.0
    stack = _stack_with_hist(h, cfg)
    bias = np.zeros((32, 32))
    iv, iu = 9, 21
    bias[iv, iu] = 60.0  # softmax saturates at this bin
    params = CCCParams(bias, np.zeros((2, 32, 32)))
    ell, p = estimate_illuminant(stack, params, cfg)
    c = cfg.centers()
    expected = uv_to_rgb(c[iu], c[iv])
    np.testing.assert_allclose(ell, expected, atol=1e-9)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(ell) == pytest.approx(1.0, abs=1e-12)


def test_ccc_params_validation():
    with pytest.raises(ValueError):
        CCCParams(np.zeros((4, 5)), np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        CCCParams(np.zeros((4, 4)), np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        CCCParams(np.zeros((4, 4)), np.zeros((2, 4, 4)), np.zeros((5, 5)))
