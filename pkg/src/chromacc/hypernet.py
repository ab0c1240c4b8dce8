"""Filter-generating hypernetwork.

A U-Net-style encoder ingests m feature stacks -- one query image plus m-1
additional images from the same camera -- and emits, through separate
decoders, the per-image localization parameters (bias map, two filters,
optionally a gain map) consumed by the CCC evaluator.  The additional images
carry no labels; they inform the network about the capture device.

All encoder branches share one weight set.  After each encoder block
(3x3 conv, leaky ReLU, batch norm, 2x2 max pool) the block output is
replaced by the elementwise max across branches, so branch order cannot
matter; the query branch's pre-pool activations feed the decoder skip
connections.  Since the first cross-branch max makes every branch identical,
deeper levels run once on the fused trunk -- algebraically the same network,
minus redundant work.

Parameters live in float64 but are kept float32-representable at all times
(initialization and every optimizer step snap them), which lets the 32-bit
weight file round-trip inference bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .ccc import CCCParams, estimate_illuminant
from .histograms import ChromaHistogram, HistogramConfig, RawImage, \
    assemble_feature_stack

__all__ = [
    "ArchitectureConfig", "NetworkWeights", "init_weights", "param_count",
    "forward_maps", "encode", "decode", "c5_infer", "infer_from_stacks",
    "save_weights", "load_weights",
]

IN_CHANNELS = 4
DECODER_OUT = {"bias": 1, "filters": 2, "gain": 1}

MAGIC = b"CCWF"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    """Shape of the hypernetwork.

    m counts total branches (1 query + m-1 additional); n is the histogram
    size and must be divisible by 2**depth so pooling stays even.
    """

    n: int = 64
    m: int = 9
    depth: int = 4
    base_channels: int = 8
    emit_gain: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.n < 2 ** self.depth or self.n % (2 ** self.depth):
            raise ValueError(
                f"n={self.n} must be a positive multiple of 2^depth={2**self.depth}")

    @property
    def channels(self) -> tuple:
        return tuple(self.base_channels * 2 ** i for i in range(self.depth))

    @property
    def decoders(self) -> tuple:
        return ("bias", "filters", "gain") if self.emit_gain else ("bias", "filters")

    def decoder_plan(self, name: str):
        """Per level (top-down): (level, in_channels, out_channels); the last
        entry is followed by the linear head conv to DECODER_OUT[name]."""
        ch = self.channels
        plan = []
        prev = ch[-1]
        for lvl in range(self.depth, 0, -1):
            cout = ch[max(lvl - 2, 0)]
            plan.append((lvl, prev + ch[lvl - 1], cout))
            prev = cout
        return plan


def _snap32(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


@dataclass
class NetworkWeights:
    """Named parameter blocks plus per-encoder-level batch norm state."""

    arch: ArchitectureConfig
    params: dict = field(default_factory=dict)
    bn: dict = field(default_factory=dict)

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            self.arch,
            {k: v.copy() for k, v in self.params.items()},
            {k: ad.BatchNormState(s.mean.copy(), s.var.copy(), s.momentum)
             for k, s in self.bn.items()},
        )

    def with_m(self, m: int) -> "NetworkWeights":
        """Same weights viewed as an m-branch network (branch count does not
        touch any parameter shape)."""
        return NetworkWeights(replace(self.arch, m=m), self.params, self.bn)


def param_count(weights: NetworkWeights) -> int:
    return int(sum(v.size for v in weights.params.values()))


def init_weights(arch: ArchitectureConfig, rng: np.random.Generator
                 ) -> NetworkWeights:
    """He fan-in initialization for convs, unit/zero affine for norms."""
    params: dict[str, np.ndarray] = {}
    bn: dict[str, ad.BatchNormState] = {}

    def conv(name, cout, cin):
        std = np.sqrt(2.0 / (cin * 9))
        params[name] = _snap32(rng.normal(0.0, std, (cout, cin, 3, 3)))

    cin = IN_CHANNELS
    for lvl, c in enumerate(arch.channels, start=1):
        conv(f"enc{lvl}.conv.w", c, cin)
        params[f"enc{lvl}.bn.gamma"] = np.ones(c)
        params[f"enc{lvl}.bn.beta"] = np.zeros(c)
        bn[f"enc{lvl}"] = ad.BatchNormState.fresh(c)
        cin = c

    for name in arch.decoders:
        for lvl, din, dout in arch.decoder_plan(name):
            conv(f"{name}.lvl{lvl}.conv.w", dout, din)
            params[f"{name}.lvl{lvl}.in.gamma"] = np.ones(dout)
            params[f"{name}.lvl{lvl}.in.beta"] = np.zeros(dout)
        head_in = arch.decoder_plan(name)[-1][2]
        conv(f"{name}.head.w", DECODER_OUT[name], head_in)
    return NetworkWeights(arch, params, bn)


# ----- graph builders -----------------------------------------------------------

def forward_maps(stacks: np.ndarray, weights: NetworkWeights, training: bool,
                 param_nodes: dict = None):
    """Build the full network graph.

    stacks: (B, m, 4, n, n) float64.  Returns (maps, param_nodes) where maps
    holds one Node per decoder: bias (B, 1, n, n), filters (B, 2, n, n),
    gain (B, 1, n, n) when emitted.  Passing param_nodes reuses existing leaf
    Nodes so callers (optimizer, gradient checks) keep stable identities
    across rebuilt graphs.
    """
    arch = weights.arch
    b, m = stacks.shape[:2]
    if m != arch.m:
        raise ValueError(f"expected m={arch.m} branches, got {m}")
    if stacks.shape[2:] != (IN_CHANNELS, arch.n, arch.n):
        raise ValueError(f"bad stack shape {stacks.shape}")
    pnodes = param_nodes if param_nodes is not None else \
        {k: ad.param(v) for k, v in weights.params.items()}
    x = ad.const(np.ascontiguousarray(
        stacks.reshape(b * m, IN_CHANNELS, arch.n, arch.n)))

    skips, trunk = _encode_nodes(x, pnodes, weights, training, m)
    maps = {}
    for name in arch.decoders:
        maps[name] = _decode_nodes(skips, trunk, pnodes, arch, name)
    return maps, pnodes


def _encode_nodes(x, pnodes, weights, training, m):
    arch = weights.arch
    skips = []
    z = x
    for lvl in range(1, arch.depth + 1):
        t = ad.conv3x3(z, pnodes[f"enc{lvl}.conv.w"])
        t = ad.leaky_relu(t)
        t = ad.batch_norm(t, pnodes[f"enc{lvl}.bn.gamma"],
                          pnodes[f"enc{lvl}.bn.beta"], training,
                          weights.bn[f"enc{lvl}"])
        if lvl == 1:
            skips.append(ad.select_branch(t, m, 0))
            z = ad.branch_max(ad.max_pool2(t), m)
        else:
            skips.append(t)
            z = ad.max_pool2(t)
    return skips, z


def _decode_nodes(skips, trunk, pnodes, arch, name):
    d = trunk
    for lvl, _, _ in arch.decoder_plan(name):
        d = ad.upsample2(d)
        d = ad.concat_channels([d, skips[lvl - 1]])
        d = ad.conv3x3(d, pnodes[f"{name}.lvl{lvl}.conv.w"])
        d = ad.leaky_relu(d)
        d = ad.instance_norm(d, pnodes[f"{name}.lvl{lvl}.in.gamma"],
                             pnodes[f"{name}.lvl{lvl}.in.beta"])
    return ad.conv3x3(d, pnodes[f"{name}.head.w"])  # linear output


# ----- public single-image ops --------------------------------------------------

def encode(stacks, weights: NetworkWeights, training: bool = False):
    """Encode one image's branch set: list of <= m ChromaHistograms or
    channel-first arrays, query first.  Returns (skips, bottleneck) as plain
    arrays: the query branch's per-level pre-pool activations and the fused
    trunk bottleneck."""
    batch = _stack_batch(stacks, weights.arch)
    pnodes = {k: ad.param(v) for k, v in weights.params.items()}
    x = ad.const(batch.reshape(weights.arch.m, IN_CHANNELS,
                               weights.arch.n, weights.arch.n))
    skips, trunk = _encode_nodes(x, pnodes, weights, training, weights.arch.m)
    return [s.value[0] for s in skips], trunk.value[0]


def decode(stacks, weights: NetworkWeights) -> CCCParams:
    """Emit localization parameters for one image's branch set."""
    batch = _stack_batch(stacks, weights.arch)
    maps, _ = forward_maps(batch[None], weights, training=False)
    return _params_from_maps(maps, weights.arch, 0)


def _params_from_maps(maps, arch, index) -> CCCParams:
    gain = maps["gain"].value[index, 0] if arch.emit_gain else None
    return CCCParams(bias=maps["bias"].value[index, 0],
                     filters=maps["filters"].value[index], gain=gain)


def _as_stack_array(stack, arch) -> np.ndarray:
    if isinstance(stack, ChromaHistogram):
        arr = stack.channel_first()
    else:
        arr = np.asarray(stack, dtype=np.float64)
        if arr.shape == (arch.n, arch.n, IN_CHANNELS):
            arr = np.ascontiguousarray(arr.transpose(2, 0, 1))
    if arr.shape != (IN_CHANNELS, arch.n, arch.n):
        raise ValueError(f"stack shape {arr.shape} does not fit n={arch.n}")
    return arr


def _stack_batch(stacks, arch) -> np.ndarray:
    """Query-first branch list -> (m, 4, n, n), padding cyclically when fewer
    than m branches are supplied."""
    arrs = [_as_stack_array(s, arch) for s in stacks]
    if not arrs:
        raise ValueError("need at least the query stack")
    if len(arrs) > arch.m:
        raise ValueError(f"got {len(arrs)} branches for m={arch.m}")
    if len(arrs) < arch.m:
        pool = arrs[1:] or arrs[:1]  # replicate query when nothing else
        for i in range(arch.m - len(arrs)):
            arrs.append(pool[i % len(pool)])
    return np.stack(arrs)


def infer_from_stacks(query_stack, additional_stacks, weights: NetworkWeights,
                      config: HistogramConfig = None):
    """Run the full estimator on precomputed feature stacks.

    Returns (unit illuminant RGB, CCCParams, heat map).
    """
    arch = weights.arch
    if config is None:
        config = HistogramConfig(n=arch.n)
    batch = _stack_batch([query_stack] + list(additional_stacks), arch)
    maps, _ = forward_maps(batch[None], weights, training=False)
    params = _params_from_maps(maps, arch, 0)
    ell, heat = estimate_illuminant(batch[0], params, config)
    return ell, params, heat


def c5_infer(query: RawImage, additional, weights: NetworkWeights,
             config: HistogramConfig = None):
    """Estimate the illuminant of a query image given unlabeled additional
    images from the same camera.  Fewer than m-1 additional images are
    replicated cyclically; with none, the query stands in for them."""
    arch = weights.arch
    if config is None:
        config = HistogramConfig(n=arch.n)
    qs = assemble_feature_stack(query, config)
    extra = [assemble_feature_stack(img, config) for img in additional]
    return infer_from_stacks(qs, extra, weights, config)


# ----- serialization ------------------------------------------------------------

def save_weights(weights: NetworkWeights, path):
    """Versioned binary weight file: header (magic, version, architecture),
    then named float32 little-endian blocks with shape prefixes."""
    arch = weights.arch
    blocks = [(0, k, v) for k, v in weights.params.items()]
    for k, s in weights.bn.items():
        blocks.append((1, f"{k}.mean", s.mean))
        blocks.append((1, f"{k}.var", s.var))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIII?3x", FORMAT_VERSION, arch.n, arch.m,
                             arch.depth, arch.base_channels, arch.emit_gain))
        fh.write(struct.pack("<I", len(blocks)))
        for kind, name, arr in blocks:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<BH", kind, len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_weights(path) -> NetworkWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"not a weight file: bad magic {raw[:4]!r}")
    version, n, m, depth, base, gain = struct.unpack_from("<IIIII?", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    arch = ArchitectureConfig(n=n, m=m, depth=depth, base_channels=base,
                              emit_gain=gain)
    off = 4 + struct.calcsize("<IIIII?3x")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    for _ in range(count):
        kind, nlen = struct.unpack_from("<BH", raw, off)
        off += 3
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off) \
                .astype(np.float64).reshape(shape)
        off += 4 * size
        (params if kind == 0 else stats)[name] = arr
    bn = {}
    for lvl in range(1, depth + 1):
        key = f"enc{lvl}"
        bn[key] = ad.BatchNormState(stats[f"{key}.mean"], stats[f"{key}.var"])
    w = NetworkWeights(arch, params, bn)
    _check_complete(w)
    return w


def _check_complete(weights: NetworkWeights):
    ref = init_weights(weights.arch, np.random.default_rng(0))
    missing = set(ref.params) - set(weights.params)
    extra = set(weights.params) - set(ref.params)
    if missing or extra:
        raise ValueError(f"weight blocks mismatch: missing {sorted(missing)}, "
                         f"unexpected {sorted(extra)}")
    for k, v in ref.params.items():
        if weights.params[k].shape != v.shape:
            raise ValueError(f"block {k} has shape {weights.params[k].shape}, "
                             f"expected {v.shape}")
