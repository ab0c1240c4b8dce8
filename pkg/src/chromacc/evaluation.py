"""Angular-error statistics, baselines, and repeated evaluation runs.

An evaluation run scores an estimator on a set of labeled images; because
the network conditions on additional same-camera images, the choice of those
images is a policy ("random", "vivid", "dull", "cross-camera", or "none" for
single-image operation) and runs are repeated with fresh draws.  A report
aggregates per-run summary statistics and their across-run spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .histograms import HistogramConfig, RawImage, assemble_feature_stack, pixel_uv
from .hypernet import NetworkWeights, infer_from_stacks
from .training import angular_error

__all__ = [
    "POLICIES", "EvalStats", "EvalReport", "EvalSample", "eval_stats",
    "gray_world", "chroma_variance", "run_eval", "format_report",
]

POLICIES = ("random", "vivid", "dull", "cross-camera", "none")

# pool size for the colorfulness-ranked policies
VIVID_POOL = 20


@dataclass(frozen=True)
class EvalStats:
    """Five-number summary of a set of angular errors, in degrees."""

    mean: float
    median: float
    trimean: float
    best25: float
    worst25: float

    def as_tuple(self):
        return (self.mean, self.median, self.trimean, self.best25,
                self.worst25)


def eval_stats(errors) -> EvalStats:
    """Summary statistics of a non-empty error sequence.

    The trimean weights the median twice against the Tukey hinges (medians
    of the lower and upper halves, both including the middle element when
    the count is odd).  best25/worst25 average the smallest and largest
    quarter, rounding the quarter up.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise ValueError("errors must be a non-empty 1-d sequence")
    s = np.sort(e)
    n = s.size
    med = float(np.median(s))
    q1 = float(np.median(s[: (n + 1) // 2]))
    q3 = float(np.median(s[n // 2:]))
    k = math.ceil(n / 4)
    return EvalStats(mean=float(s.mean()),
                     median=med,
                     trimean=(q1 + 2.0 * med + q3) / 4.0,
                     best25=float(s[:k].mean()),
                     worst25=float(s[-k:].mean()))


@dataclass(frozen=True)
class EvalReport:
    """Per-run statistics plus their across-run mean and population std."""

    runs: tuple
    mean: EvalStats
    std: EvalStats

    @classmethod
    def from_runs(cls, runs) -> "EvalReport":
        runs = tuple(runs)
        if not runs:
            raise ValueError("a report needs at least one run")
        table = np.array([r.as_tuple() for r in runs])
        return cls(runs,
                   EvalStats(*(float(x) for x in table.mean(axis=0))),
                   EvalStats(*(float(x) for x in table.std(axis=0))))


@dataclass
class EvalSample:
    """One labeled evaluation image."""

    image: RawImage
    illuminant: np.ndarray
    camera: str = ""

    def __post_init__(self):
        ell = np.asarray(self.illuminant, dtype=np.float64)
        norm = np.linalg.norm(ell)
        if ell.shape != (3,) or norm == 0:
            raise ValueError("illuminant must be a nonzero 3-vector")
        self.illuminant = ell / norm


def gray_world(image: RawImage) -> np.ndarray:
    """Baseline estimate: unit-normalized mean of the valid pixels."""
    pix = image.pixels[image.mask]
    if pix.size == 0:
        raise ValueError("no valid pixels")
    est = pix.mean(axis=0)
    norm = np.linalg.norm(est)
    if norm == 0:
        raise ValueError("all valid pixels are black")
    return est / norm


def chroma_variance(image: RawImage) -> float:
    """Colorfulness score: var(u) + var(v) over valid strictly-positive
    pixels; 0.0 when fewer than two qualify."""
    u, v, valid = pixel_uv(image.pixels[image.mask])
    if valid.sum() < 2:
        return 0.0
    return float(np.var(u[valid]) + np.var(v[valid]))


def _candidate_pools(samples, policy, pool_size):
    """Per-query index pools the additional images are drawn from."""
    cameras = [s.camera for s in samples]
    if policy in ("vivid", "dull"):
        variances = [chroma_variance(s.image) for s in samples]
    pools = []
    for i in range(len(samples)):
        if policy == "none":
            pools.append([])
            continue
        if policy == "cross-camera":
            pool = [j for j in range(len(samples))
                    if j != i and cameras[j] != cameras[i]]
            if not pool:
                raise ValueError("cross-camera policy needs images from "
                                 "more than one camera")
            pools.append(pool)
            continue
        same = [j for j in range(len(samples))
                if j != i and cameras[j] == cameras[i]]
        if policy in ("vivid", "dull"):
            same.sort(key=lambda j: variances[j], reverse=(policy == "vivid"))
            same = same[:pool_size]
        pools.append(same)
    return pools


def _draw(pool, k, rng):
    """k indices from pool: without replacement when it is big enough,
    cycling a shuffled order otherwise.  Empty pool draws nothing."""
    if k == 0 or not pool:
        return []
    perm = rng.permutation(len(pool))
    return [pool[perm[t % len(pool)]] for t in range(k)]


def run_eval(weights: NetworkWeights, samples, policy: str = "random",
             repeats: int = 10, rng=None, config: HistogramConfig = None,
             estimator=None, pool_size: int = VIVID_POOL) -> EvalReport:
    """Score an estimator on labeled samples under an additional-image
    policy, repeated with fresh draws.

    estimator defaults to the network (weights + histograms); a substitute
    takes (query RawImage, list of additional RawImages) and returns an
    illuminant estimate.  "none" runs the network in single-image mode.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r} (choose from {POLICIES})")
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to evaluate")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.default_rng(rng)
    extra = 0 if policy == "none" else weights.arch.m - 1
    pools = _candidate_pools(samples, policy, pool_size)

    stacks = None
    if estimator is None:
        cfg = config if config is not None else HistogramConfig(n=weights.arch.n)
        if cfg.n != weights.arch.n:
            raise ValueError(f"histogram size {cfg.n} does not match "
                             f"network input {weights.arch.n}")
        stacks = [assemble_feature_stack(s.image, cfg) for s in samples]
        net = weights.with_m(1) if policy == "none" else weights

    runs = []
    for _ in range(repeats):
        errors = []
        for i, sample in enumerate(samples):
            adds = _draw(pools[i], extra, rng)
            if estimator is None:
                ell, _, _ = infer_from_stacks(
                    stacks[i], [stacks[j] for j in adds], net)
            else:
                ell = estimator(sample.image,
                                [samples[j].image for j in adds])
            errors.append(angular_error(ell, sample.illuminant))
        runs.append(eval_stats(errors))
    return EvalReport.from_runs(runs)


def format_report(report: EvalReport) -> str:
    """Two-row text table: across-run means with stds underneath."""
    names = ("mean", "median", "trimean", "best25", "worst25")
    head = "".join(f"{n:>10}" for n in names)
    mean = "".join(f"{getattr(report.mean, n):10.4f}" for n in names)
    std = "".join(f"{getattr(report.std, n):10.4f}" for n in names)
    return "\n".join([" " * 6 + head, "mean  " + mean, "std   " + std])
