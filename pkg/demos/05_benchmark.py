# The headline claim, end to end: train on synthetic cameras, estimate
# illuminants for a camera the model has never seen, beat gray world.
#
# Everything is manufactured: 3 training cameras plus 1 held-out camera,
# each with its own color space transforms and illuminant population.
# Training images are cross-camera augmentations (a capture from one
# camera re-rendered into another's space under a sampled illuminant), so
# the model never sees the held-out camera at all.  Expect a few minutes;
# it trains a model from scratch on one CPU.

import numpy as np

from chromacc import run_benchmark
from chromacc.evaluation import format_report

result = run_benchmark(seed=0)

print("held-out camera, 200 images, mean over 3 evaluation repeats\n")
print("network, 8 additional images per query:")
print(format_report(result.c5))
print("\nsame weights, no additional images:")
print(format_report(result.single))
print("\ngray-world baseline:")
print(format_report(result.baseline))

c5 = result.c5.mean.mean
single = result.single.mean.mean
gw = result.baseline.mean.mean
print(f"\nmean angular error: network {c5:.2f} deg vs gray world "
      f"{gw:.2f} deg ({c5 / gw:.2f}x)")
print("additional images help:", c5 <= single)

# the run is deterministic: the same seed rebuilds the same cameras, the
# same training trajectory, and bit-identical reports
