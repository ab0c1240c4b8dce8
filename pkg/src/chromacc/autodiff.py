"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything is float64.  A Node wraps one array value; ops build new Nodes
and register, per parent, a vector-Jacobian closure mapping the upstream
gradient to that parent's gradient contribution.  backward() walks the tape
in reverse topological order.  Graph construction is deterministic: the same
inputs produce bit-identical values and gradients.

The op set is exactly what the filter-generating network and its training
loss require; this is not a general-purpose autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Node", "MissingGradientError", "NumericalError", "backward", "const",
    "param",
    "add", "sub", "mul", "scale", "reshape", "concat_channels",
    "select_branch", "branch_max", "conv3x3", "leaky_relu",
    "BatchNormState", "batch_norm", "instance_norm", "max_pool2",
    "upsample2", "softmax2d", "expectation2d", "ccc_conv", "uv_to_rgb",
    "dot", "l2norm", "arccos", "sum_per_sample", "sum_all", "mean_all",
    "GradCheckReport", "grad_check",
]

ARCCOS_CLAMP = 1.0 - 1e-7


class NumericalError(RuntimeError):
    """A numeric procedure failed: non-finite values, exhausted rejection
    sampling, or gradients that disagree with finite differences."""


class MissingGradientError(RuntimeError):
    """Backward reached a differentiable path with no registered gradient."""


class Node:
    """One value on the tape.

    parents is a sequence of (parent_node, vjp) pairs; vjp(g) returns the
    gradient contribution to that parent given this node's gradient g.
    """

    __slots__ = ("value", "grad", "parents", "needs_grad")

    def __init__(self, value, parents=(), needs_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p, _ in self.parents)
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None


def const(value) -> Node:
    """Leaf that never receives a gradient (inputs, targets, fixed planes)."""
    return Node(value, needs_grad=False)


def param(value) -> Node:
    """Leaf whose gradient is wanted (weights)."""
    return Node(value, needs_grad=True)


def backward(root: Node):
    """Accumulate droot/dnode into .grad for every upstream needs_grad Node."""
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    topo: list[Node] = []
    state: dict[int, int] = {}  # id -> 0 discovered, 1 finished
    stack = [root]
    while stack:
        node = stack[-1]
        s = state.get(id(node))
        if s is None:
            state[id(node)] = 0
            for parent, _ in node.parents:
                if parent.needs_grad and id(parent) not in state:
                    stack.append(parent)
        elif s == 0:
            state[id(node)] = 1
            topo.append(node)
            stack.pop()
        else:
            stack.pop()

    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            if not parent.needs_grad:
                continue
            if vjp is None:
                raise MissingGradientError(
                    "node on a differentiable path has no registered gradient")
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


# ----- elementwise and shape ops ---------------------------------------------

def add(a: Node, b: Node) -> Node:
    _same_shape(a, b)
    return Node(a.value + b.value, [(a, lambda g: g), (b, lambda g: g)])


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b)
    return Node(a.value - b.value, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a: Node, b: Node) -> Node:
    _same_shape(a, b)
    av, bv = a.value, b.value
    return Node(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.value * c, [(a, lambda g: g * c)])


def reshape(a: Node, shape) -> Node:
    old = a.value.shape
    return Node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def concat_channels(nodes) -> Node:
    """Concatenate along axis 1 (the channel axis of (B, C, H, W))."""
    nodes = list(nodes)
    widths = [nd.value.shape[1] for nd in nodes]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    value = np.concatenate([nd.value for nd in nodes], axis=1)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]
        return lambda g: g[:, lo:hi]

    return Node(value, [(nd, make_vjp(i)) for i, nd in enumerate(nodes)])


def select_branch(a: Node, m: int, index: int = 0) -> Node:
    """From branch-major (B*m, ...) pick one branch: rows index, index+m, ..."""
    bm = a.value.shape[0]
    if bm % m:
        raise ValueError(f"leading axis {bm} not divisible by m={m}")
    value = a.value[index::m]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[index::m] = g
        return out

    return Node(value, [(a, vjp)])


def branch_max(a: Node, m: int) -> Node:
    """Elementwise max across each group of m consecutive rows of (B*m, ...).

    Ties route the gradient to the first branch in the group.
    """
    bm = a.value.shape[0]
    if bm % m:
        raise ValueError(f"leading axis {bm} not divisible by m={m}")
    grouped = a.value.reshape(bm // m, m, *a.value.shape[1:])
    value = grouped.max(axis=1)
    idx = grouped.argmax(axis=1)  # first max in branch order

    def vjp(g):
        out = np.zeros_like(grouped)
        np.put_along_axis(out, idx[:, None], g[:, None], axis=1)
        return out.reshape(a.value.shape)

    return Node(value, [(a, vjp)])


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    pos = a.value > 0
    mult = np.where(pos, 1.0, slope)
    return Node(a.value * mult, [(a, lambda g: g * mult)])


# ----- convolution ------------------------------------------------------------

def conv3x3(x: Node, w: Node, pad: int = 1) -> Node:
    """3x3 cross-correlation, stride 1: x (B, Cin, H, W), w (Cout, Cin, 3, 3).

    pad=1 keeps the spatial size (zero padding); pad=0 is the valid
    convolution used for smoothness penalties.
    """
    xv, wv = x.value, w.value
    if xv.ndim != 4 or wv.ndim != 4 or wv.shape[2:] != (3, 3):
        raise ValueError(f"bad conv shapes {xv.shape}, {wv.shape}")
    if xv.shape[1] != wv.shape[1]:
        raise ValueError(f"channel mismatch {xv.shape[1]} vs {wv.shape[1]}")
    if pad not in (0, 1):
        raise ValueError("pad must be 0 or 1")
    b, cin, h, wdt = xv.shape
    cout = wv.shape[0]
    xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xv
    ho, wo = xp.shape[2] - 2, xp.shape[3] - 2
    if ho < 1 or wo < 1:
        raise ValueError("input too small for 3x3 valid convolution")

    out_t = np.zeros((cout, b, ho, wo))
    for dy in range(3):
        for dx in range(3):
            sl = xp[:, :, dy:dy + ho, dx:dx + wo]
            # (Cout, Cin) . (B, Cin, ho, wo) over Cin
            out_t += np.tensordot(wv[:, :, dy, dx], sl, axes=([1], [1]))
    value = out_t.transpose(1, 0, 2, 3)

    def vjp_x(g):
        gp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                # (B, Cout, ho, wo) x (Cout, Cin) -> (B, Cin, ho, wo)
                gp[:, :, dy:dy + ho, dx:dx + wo] += np.tensordot(
                    g, wv[:, :, dy, dx], axes=([1], [0])).transpose(0, 3, 1, 2)
        if pad:
            return gp[:, :, 1:-1, 1:-1]
        return gp

    def vjp_w(g):
        gw = np.zeros_like(wv)
        for dy in range(3):
            for dx in range(3):
                sl = xp[:, :, dy:dy + ho, dx:dx + wo]
                gw[:, :, dy, dx] = np.tensordot(g, sl, axes=([0, 2, 3], [0, 2, 3]))
        return gw

    return Node(value, [(x, vjp_x), (w, vjp_w)])


# ----- normalization ----------------------------------------------------------

BN_EPS = 1e-8


def _snap32(x: np.ndarray) -> np.ndarray:
    """Round to float32-representable values (kept in float64 storage)."""
    return x.astype(np.float32).astype(np.float64)


@dataclass
class BatchNormState:
    """Running statistics for inference, one entry per channel.

    Updated with momentum during training forwards; values are kept
    float32-representable so weight files round-trip bit-exactly.
    """

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))

    def update(self, mu: np.ndarray, var: np.ndarray):
        m = self.momentum
        self.mean = _snap32(m * self.mean + (1.0 - m) * mu)
        self.var = _snap32(m * self.var + (1.0 - m) * var)


def batch_norm(x: Node, gamma: Node, beta: Node, training: bool,
               state: BatchNormState = None) -> Node:
    """Per-channel normalization of (B, C, H, W) over batch and space.

    Training uses batch statistics (and pushes them into state when given);
    inference normalizes with the running averages.
    """
    xv = x.value
    axes = (0, 2, 3)
    gm = gamma.value[None, :, None, None]
    if training:
        mu = xv.mean(axis=axes)
        var = xv.var(axis=axes)
        if state is not None:
            state.update(mu, var)
        sigma = np.sqrt(var + BN_EPS)
        xhat = (xv - mu[None, :, None, None]) / sigma[None, :, None, None]
        value = gm * xhat + beta.value[None, :, None, None]

        def vjp_x(g):
            dxhat = g * gm
            mean_d = dxhat.mean(axis=axes)
            mean_dx = (dxhat * xhat).mean(axis=axes)
            return (dxhat - mean_d[None, :, None, None]
                    - xhat * mean_dx[None, :, None, None]) \
                / sigma[None, :, None, None]
    else:
        if state is None:
            raise ValueError("inference batch_norm needs running statistics")
        sigma = np.sqrt(state.var + BN_EPS)
        xhat = (xv - state.mean[None, :, None, None]) / sigma[None, :, None, None]
        value = gm * xhat + beta.value[None, :, None, None]

        def vjp_x(g):
            return g * gm / sigma[None, :, None, None]

    def vjp_gamma(g):
        return (g * xhat).sum(axis=axes)

    def vjp_beta(g):
        return g.sum(axis=axes)

    return Node(value, [(x, vjp_x), (gamma, vjp_gamma), (beta, vjp_beta)])


def instance_norm(x: Node, gamma: Node, beta: Node) -> Node:
    """Per-sample per-channel normalization of (B, C, H, W) over space."""
    xv = x.value
    axes = (2, 3)
    mu = xv.mean(axis=axes, keepdims=True)
    var = xv.var(axis=axes, keepdims=True)
    sigma = np.sqrt(var + BN_EPS)
    xhat = (xv - mu) / sigma
    gm = gamma.value[None, :, None, None]
    value = gm * xhat + beta.value[None, :, None, None]

    def vjp_x(g):
        dxhat = g * gm
        mean_d = dxhat.mean(axis=axes, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) / sigma

    return Node(value, [
        (x, vjp_x),
        (gamma, lambda g: (g * xhat).sum(axis=(0, 2, 3))),
        (beta, lambda g: g.sum(axis=(0, 2, 3))),
    ])


# ----- resampling -------------------------------------------------------------

def max_pool2(x: Node) -> Node:
    """2x2 max pooling, stride 2; ties pick the first entry in row-major
    window order (so the gradient routing is deterministic)."""
    b, c, h, w = x.value.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims must be even, got {h}x{w}")
    win = x.value.reshape(b, c, h // 2, 2, w // 2, 2) \
                 .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    value = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gw = np.zeros((b, c, h // 2, w // 2, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return gw.reshape(b, c, h // 2, w // 2, 2, 2) \
                 .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)

    return Node(value, [(x, vjp)])


_UPSAMPLE_MATS: dict[int, np.ndarray] = {}


def _upsample_matrix(size: int) -> np.ndarray:
    """Dense (2s, s) bilinear interpolation matrix, half-pixel centers,
    clamped edges.  Rows sum to 1, so constants stay constant."""
    mat = _UPSAMPLE_MATS.get(size)
    if mat is None:
        mat = np.zeros((2 * size, size))
        for i in range(2 * size):
            s = (i + 0.5) / 2.0 - 0.5
            i0 = int(np.floor(s))
            f = s - i0
            mat[i, min(max(i0, 0), size - 1)] += 1.0 - f
            mat[i, min(max(i0 + 1, 0), size - 1)] += f
        _UPSAMPLE_MATS[size] = mat
    return mat


def upsample2(x: Node) -> Node:
    """2x bilinear upsampling of (B, C, H, W)."""
    b, c, h, w = x.value.shape
    ah = _upsample_matrix(h)
    aw = _upsample_matrix(w)
    value = np.matmul(np.matmul(ah, x.value), aw.T)

    def vjp(g):
        return np.matmul(np.matmul(ah.T, g), aw)

    return Node(value, [(x, vjp)])


# ----- heat-map head ----------------------------------------------------------

def softmax2d(x: Node) -> Node:
    """Max-subtracted softmax over the trailing two axes."""
    z = x.value - x.value.max(axis=(-2, -1), keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=(-2, -1), keepdims=True)

    def vjp(g):
        inner = (g * p).sum(axis=(-2, -1), keepdims=True)
        return p * (g - inner)

    return Node(p, [(x, vjp)])


def expectation2d(p: Node, plane: np.ndarray) -> Node:
    """Weighted coordinate expectation sum_ij p[..., i, j] * plane[i, j]."""
    plane = np.asarray(plane, dtype=np.float64)
    value = (p.value * plane).sum(axis=(-2, -1))
    return Node(value, [(p, lambda g: g[..., None, None] * plane)])


def ccc_conv(h: Node, f: Node) -> Node:
    """Per-sample localization convolution.

    h, f: (B, C, n, n).  Returns (B, n, n): the channel-summed same-size
    linear convolution of each histogram with its own filter, kernel anchored
    at (n//2, n//2).  FFT-based; matches ccc.convolve2d.
    """
    hv, fv = h.value, f.value
    if hv.shape != fv.shape or hv.ndim != 4 or hv.shape[-1] != hv.shape[-2]:
        raise ValueError(f"bad ccc_conv shapes {hv.shape}, {fv.shape}")
    n = hv.shape[-1]
    c = n // 2
    s = 2 * n
    fh = np.fft.rfft2(hv, s=(s, s))
    ff = np.fft.rfft2(fv, s=(s, s))
    full = np.fft.irfft2(fh * ff, s=(s, s))
    value = full[..., c:c + n, c:c + n].sum(axis=1)

    def pad_g(g):
        gp = np.zeros((g.shape[0], s, s))
        gp[:, c:c + n, c:c + n] = g
        return np.fft.rfft2(gp)[:, None]  # broadcast over channels

    def vjp_h(g):
        return np.fft.irfft2(pad_g(g) * np.conj(ff), s=(s, s))[..., :n, :n]

    def vjp_f(g):
        return np.fft.irfft2(pad_g(g) * np.conj(fh), s=(s, s))[..., :n, :n]

    return Node(value, [(h, vjp_h), (f, vjp_f)])


def uv_to_rgb(u: Node, v: Node) -> Node:
    """(..., ) log-chroma pair to (..., 3) unit RGB, ell = (e^-u, 1, e^-v)/z."""
    a = np.exp(-u.value)
    b = np.exp(-v.value)
    z = np.sqrt(a * a + b * b + 1.0)
    lr, lg, lb = a / z, 1.0 / z, b / z
    value = np.stack([lr, lg, lb], axis=-1)

    def vjp_u(g):
        return (g[..., 0] * (lr**3 - lr) + g[..., 1] * lr**2 * lg
                + g[..., 2] * lr**2 * lb)

    def vjp_v(g):
        return (g[..., 0] * lb**2 * lr + g[..., 1] * lb**2 * lg
                + g[..., 2] * (lb**3 - lb))

    return Node(value, [(u, vjp_u), (v, vjp_v)])


def dot(a: Node, b: Node) -> Node:
    """Inner product over the last axis."""
    _same_shape(a, b)
    av, bv = a.value, b.value
    return Node((av * bv).sum(axis=-1), [
        (a, lambda g: g[..., None] * bv),
        (b, lambda g: g[..., None] * av),
    ])


def l2norm(a: Node) -> Node:
    """Euclidean norm over the last axis (positive input norm assumed)."""
    r = np.sqrt((a.value ** 2).sum(axis=-1))
    av = a.value
    return Node(r, [(a, lambda g: g[..., None] * av / r[..., None])])


def arccos(a: Node) -> Node:
    """arccos with the argument clamped to +-(1 - 1e-7); the gradient is zero
    in the clamped region."""
    clamped = np.clip(a.value, -ARCCOS_CLAMP, ARCCOS_CLAMP)
    inside = np.abs(a.value) < ARCCOS_CLAMP
    deriv = np.where(inside, -1.0 / np.sqrt(1.0 - clamped**2), 0.0)
    return Node(np.arccos(clamped), [(a, lambda g: g * deriv)])


# ----- reductions -------------------------------------------------------------

def sum_per_sample(a: Node) -> Node:
    """Sum everything but the leading axis: (B, ...) -> (B,)."""
    axes = tuple(range(1, a.value.ndim))
    value = a.value.sum(axis=axes)

    def vjp(g):
        return np.broadcast_to(g.reshape(g.shape + (1,) * (a.value.ndim - 1)),
                               a.value.shape).copy()

    return Node(value, [(a, vjp)])


def sum_all(a: Node) -> Node:
    return Node(a.value.sum(),
                [(a, lambda g: np.broadcast_to(g, a.value.shape).copy())])


def mean_all(a: Node) -> Node:
    k = 1.0 / a.value.size
    return Node(a.value.mean(),
                [(a, lambda g: np.broadcast_to(g * k, a.value.shape).copy())])


def _same_shape(a: Node, b: Node):
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch {a.value.shape} vs {b.value.shape}")


# ----- finite-difference checking ---------------------------------------------

@dataclass
class GradCheckReport:
    """Per-leaf worst relative errors between analytic and numeric grads."""

    per_leaf: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max(self.per_leaf.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(build, leaves: dict, step: float = 1e-4, tol: float = 1e-4,
               rng: np.random.Generator = None,
               max_per_leaf: int = None) -> GradCheckReport:
    """Compare backward() gradients against central finite differences.

    build is a zero-argument callable returning a scalar Node constructed
    from the Nodes in leaves (name -> Node); it is re-executed per probe, so
    it must be deterministic -- this is verified and a mismatch is an error.
    The relative error denominator is floored at 1e-3 to keep finite
    difference noise on near-zero gradients from dominating.

    max_per_leaf subsamples probe positions per leaf (rng required) so large
    tensors stay affordable; None probes every element.
    """
    for leaf in leaves.values():
        leaf.zero_grad()
    out = build()
    out2 = build()
    if not np.array_equal(out.value, out2.value):
        raise RuntimeError("build() is not deterministic; gradients would be "
                           "meaningless")
    backward(out)
    analytic = {}
    for name, leaf in leaves.items():
        if leaf.grad is None:
            analytic[name] = np.zeros_like(leaf.value)
        else:
            analytic[name] = leaf.grad.copy()
        leaf.zero_grad()

    report = GradCheckReport(tol=tol)
    for name, leaf in leaves.items():
        flat = leaf.value.reshape(-1)
        count = flat.size
        if max_per_leaf is not None and count > max_per_leaf:
            if rng is None:
                raise ValueError("subsampling requires an rng")
            picks = rng.choice(count, size=max_per_leaf, replace=False)
        else:
            picks = np.arange(count)
        worst = 0.0
        ana = analytic[name].reshape(-1)
        for i in picks:
            keep = flat[i]
            flat[i] = keep + step
            fp = float(build().value)
            flat[i] = keep - step
            fm = float(build().value)
            flat[i] = keep
            num = (fp - fm) / (2.0 * step)
            denom = max(abs(num), abs(ana[i]), 1e-3)
            worst = max(worst, abs(num - ana[i]) / denom)
        report.per_leaf[name] = worst
    return report
