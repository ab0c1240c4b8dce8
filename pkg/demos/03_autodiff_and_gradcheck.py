# The reverse-mode tape the trainer runs on, and how we know it is right.
#
# Every differentiable step in this package goes through one small Node
# type: a value, a list of (parent, vector-jacobian-product) pairs, and a
# grad slot filled by backward().  No framework import, no graph compiler.
# The price of rolling this by hand is that every op's backward rule is a
# chance to be wrong, so grad_check() compares the tape's gradients against
# central finite differences on demand.

import numpy as np

from chromacc import autodiff as ad

# ----- a tiny graph by hand --------------------------------------------------

# f(w) = mean(leaky_relu(conv3x3(x, w)))  for a fixed input x
rng = np.random.default_rng(7)
x = ad.const(rng.standard_normal((1, 2, 8, 8)))  # (batch, channels, h, w)
w = ad.param(rng.standard_normal((3, 2, 3, 3)) * 0.3)

y = ad.mean_all(ad.leaky_relu(ad.conv3x3(x, w)))
ad.backward(y)
print("scalar output:", float(y.value))
print("dL/dw shape:", w.grad.shape, " mean |grad|:", np.abs(w.grad).mean())

# the same graph rebuilt from the same leaves must give the same value;
# backward() only ever sees one tape, so reuse means rebuild
w.zero_grad()

# ----- checking the rules numerically ----------------------------------------

# grad_check re-runs a build() closure while nudging each leaf entry by
# +/-step.  The closure must be deterministic: it is executed twice up
# front and any bitwise difference is an error, because a noisy build makes
# finite differences meaningless.


def build():
    return ad.mean_all(ad.leaky_relu(ad.conv3x3(x, w)))


report = ad.grad_check(build, {"w": w}, step=1e-5)
print("per-leaf worst relative error:", report.per_leaf)
print("within tolerance:", report.ok)

# ----- the composite ops the estimator actually uses -------------------------

# softmax2d -> expectation2d -> uv_to_rgb is the whole readout path from a
# score map to an illuminant estimate.  Checking it end to end exercises
# the chain rule across shapes (map -> scalar coordinates -> 3-vector).
cfg_n = 16
centers = np.linspace(-1.0, 1.0, cfg_n)
u_plane = np.tile(centers, (cfg_n, 1))
v_plane = u_plane.T

scores = ad.param(rng.standard_normal((1, cfg_n, cfg_n)))
target = np.array([0.2, 0.9, 0.4])
target /= np.linalg.norm(target)


def build_readout():
    p = ad.softmax2d(scores)
    u = ad.expectation2d(p, u_plane)
    v = ad.expectation2d(p, v_plane)
    ell = ad.uv_to_rgb(u, v)
    # angular error against a fixed target, the training loss's core
    return ad.mean_all(ad.arccos(ad.dot(ell, ad.const(target[None]))))


probe_rng = np.random.default_rng(11)
report = ad.grad_check(build_readout, {"scores": scores}, step=1e-5,
                       rng=probe_rng, max_per_leaf=32)
print("readout chain worst relative error: %.3g" % report.max_rel_err)

# ----- what the determinism guard catches ------------------------------------


def build_noisy():
    noise = np.random.default_rng().standard_normal(scores.value.shape)
    return ad.mean_all(ad.mul(scores, ad.const(noise)))


try:
    ad.grad_check(build_noisy, {"scores": scores})
except RuntimeError as e:
    print("noisy build rejected:", e)
