"""Random-instance gradient checks against central differences (float64)."""

import numpy as np

from oracles import central_difference, rel_error
from spnn.layers import (
    BatchNormParams,
    SparseAffineLayer,
    batchnorm_backward,
    batchnorm_forward,
    relu_backward,
    relu_forward,
)
from spnn.lfsr import generate_mask, make_sng
from spnn.train import squared_hinge_loss

STEP = 1e-5


def _shape(rng):
    return int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(2, 5))


def check_affine(rng):
    n, m, batch = _shape(rng)
    mask = generate_mask(n, m, make_sng(n, float(rng.uniform(0, 0.9))), int(rng.integers(1, 8)))
    layer = SparseAffineLayer(rng.normal(size=(n, m)), rng.normal(size=m), mask)
    x = rng.normal(size=(batch, n))
    r = rng.normal(size=(batch, m))

    def loss():
        return float((layer.forward(x)[0] * r).sum())

    _, cache = layer.forward(x)
    gW, gb, gx = layer.backward(cache, r)
    # gradient w.r.t. the effective (masked) weights, masked again as in training
    num_W = central_difference(loss, layer.W, STEP) * mask.bits
    return max(rel_error(gW, num_W), rel_error(gb, central_difference(loss, layer.b, STEP)),
               rel_error(gx, central_difference(loss, x, STEP)))


def check_relu(rng):
    _, m, batch = _shape(rng)
    x = rng.normal(size=(batch, m))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    r = rng.normal(size=(batch, m))

    def loss():
        return float((relu_forward(x)[0] * r).sum())

    _, cache = relu_forward(x)
    return rel_error(relu_backward(cache, r), central_difference(loss, x, STEP))


def check_batchnorm(rng):
    _, m, batch = _shape(rng)
    bn = BatchNormParams.initialize(m, np.float64)
    bn.gamma[:] = rng.uniform(0.5, 1.5, m)
    bn.beta[:] = rng.normal(size=m)
    x = rng.normal(size=(batch, m)) * rng.uniform(0.5, 3.0, m)
    r = rng.normal(size=(batch, m))

    def loss():
        return float((batchnorm_forward(bn, x, "train")[0] * r).sum())

    _, cache = batchnorm_forward(bn, x, "train")
    gx, gg, gbeta = batchnorm_backward(bn, cache, r)
    return max(rel_error(gx, central_difference(loss, x, STEP)),
               rel_error(gg, central_difference(loss, bn.gamma, STEP)),
               rel_error(gbeta, central_difference(loss, bn.beta, STEP)))


def check_hinge(rng):
    batch, k = int(rng.integers(1, 5)), int(rng.integers(2, 11))
    s = rng.normal(scale=1.5, size=(batch, k))
    labels = rng.integers(0, k, size=batch)
    t = np.where(np.arange(k)[None, :] == labels[:, None], 1.0, -1.0)
    near = np.abs(1 - t * s) < 1e-3
    s[near] += 0.01  # keep clear of the hinge point

    def loss():
        return squared_hinge_loss(s, labels)[0]

    _, grad = squared_hinge_loss(s, labels)
    return rel_error(grad, central_difference(loss, s, STEP))


CHECKS = {"sparse_affine": check_affine, "relu": check_relu, "batchnorm": check_batchnorm,
          "squared_hinge": check_hinge}
