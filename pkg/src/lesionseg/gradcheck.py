"""Finite-difference verification of every hand-written backward pass.

The layer suite perturbs inputs/weights of each op in float64 (the shadow
mode of the kernels) with central differences at step 1e-3 and compares
against the analytic gradients. The network suite runs the full
minimal-width model in float32 and checks every parameter gradient against
finite differences of the training loss. Relative error is the max
absolute difference over the larger of the two max magnitudes.
"""

from __future__ import annotations

import numpy as np

from .network import InceptionConfig, build_network, network_backward, network_forward
from .optim import mse_loss
from .tensor_ops import (
    ConvKernel,
    conv2d_same_backward,
    conv2d_same_forward,
    pool3x3_backward,
    pool3x3_forward,
    relu,
    relu_backward,
)

STEP = 1e-3


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(
        float(np.abs(analytic).max(initial=0.0)),
        float(np.abs(numeric).max(initial=0.0)),
        1e-12,
    )
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def finite_diff_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar f at x, perturbing x in place.

    Divides by the step actually achieved after rounding into x's dtype,
    which matters when x is float32.
    """
    if not x.flags["C_CONTIGUOUS"]:
        raise ValueError("finite_diff_grad needs a contiguous array")
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(flat[i])
        fp = f()
        flat[i] = orig - step
        lo = float(flat[i])
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (hi - lo)
    return g


def _rand_kernel(rng, out_c, in_c, kh, kw, dtype=np.float64) -> ConvKernel:
    w = rng.standard_normal((out_c, in_c, kh, kw)).astype(dtype)
    b = rng.standard_normal(out_c).astype(dtype)
    return ConvKernel(w, b)


def _check_conv(rng) -> float:
    n, c, h, w = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                  int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    out_c = int(rng.integers(1, 4))
    kh, kw = rng.choice([1, 3, 5], size=2)
    x = rng.standard_normal((n, c, h, w))
    k = _rand_kernel(rng, out_c, c, int(kh), int(kw))
    go = rng.standard_normal((n, out_c, h, w))

    gx, gw, gb = conv2d_same_backward(x, k, go)

    def loss():
        return float(np.sum(conv2d_same_forward(x, k) * go))

    errs = [
        rel_error(gx, finite_diff_grad(loss, x)),
        rel_error(gw, finite_diff_grad(loss, k.weights)),
        rel_error(gb, finite_diff_grad(loss, k.bias)),
    ]
    return max(errs)


def _check_pool(rng, mode: str) -> float:
    n, c, h, w = (int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                  int(rng.integers(1, 7)), int(rng.integers(1, 7)))
    # distinct values with pairwise gaps > 2*STEP per plane, so a
    # perturbation can never swap a max-pool winner mid-check
    base = 0.1 * np.arange(h * w, dtype=np.float64) - 0.05 * h * w
    x = np.stack(
        [
            rng.permutation(base) + rng.uniform(0, 0.04, h * w)
            for _ in range(n * c)
        ]
    ).reshape(n, c, h, w)
    go = rng.standard_normal((n, c, h, w))
    _, cache = pool3x3_forward(x, mode)
    gx = pool3x3_backward(cache, go)

    def loss():
        return float(np.sum(pool3x3_forward(x, mode)[0] * go))

    return rel_error(gx, finite_diff_grad(loss, x))


def _check_relu(rng) -> float:
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
             int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    # keep values away from the kink at 0 so central differences are exact
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < 0.05, 0.1, x)
    go = rng.standard_normal(shape)
    gx = relu_backward(x, go)

    def loss():
        return float(np.sum(relu(x) * go))

    return rel_error(gx, finite_diff_grad(loss, x))


def _check_mse(rng) -> float:
    shape = (int(rng.integers(1, 3)), 1, int(rng.integers(1, 6)),
             int(rng.integers(1, 6)))
    pred = rng.standard_normal(shape)
    target = rng.standard_normal(shape)
    _, grad = mse_loss(pred, target)

    def loss():
        return mse_loss(pred, target)[0]

    return rel_error(grad, finite_diff_grad(loss, pred))


def run_layer_suite(seed: int = 0, n_configs: int = 20) -> float:
    """Max relative error over all layer backward checks, 64-bit shadow."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        worst = max(
            worst,
            _check_conv(rng),
            _check_pool(rng, "max"),
            _check_pool(rng, "avg"),
            _check_relu(rng),
            _check_mse(rng),
        )
    return worst


MINIMAL_CONFIGS = (
    InceptionConfig(1, 1, 1, 1, 1, 1, 1),
    InceptionConfig(1, 1, 1, 1, 1, 1, 1),
    InceptionConfig(1, 1, 1, 1, 1, 1, 1),
)


def _clone_float64(net):
    shadow = build_network([m.config for m in net.modules], seed=0,
                           input_channels=net.input_channels)
    for dst, src in zip(shadow.kernels(), net.kernels()):
        dst.weights = src.weights.astype(np.float64)
        dst.bias = src.bias.astype(np.float64)
    return shadow


def run_network_suite(seed: int = 0, trials: int = 10) -> float:
    """Max relative error of full-network parameter gradients, float32.

    Checks d(mse)/d(param) from network_backward against central
    differences of the training loss for every parameter of the
    minimal-width model on random 9x9 inputs.

    Two measures keep the finite-difference oracle itself trustworthy in a
    piecewise-linear network. Biases are randomized away from zero so no
    ReLU pre-activation sits exactly on its kink. And since a +-1e-3 step
    on some parameter occasionally sweeps a downstream pre-activation
    through zero (the oracle, not the gradient, breaks there), any element
    disagreeing at the coarse step is re-measured in the float64 shadow of
    the same network at step 1e-6, where a crossing would need the kink
    within 1e-6 of the base point. A genuine backward bug disagrees at
    every step and still fails.
    """
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(seed + 1000 + trial)
        net = build_network(MINIMAL_CONFIGS, seed=seed + trial)
        for kernel in net.kernels():
            sign = np.where(rng.random(kernel.bias.shape) < 0.5, -1.0, 1.0)
            mag = 0.05 + np.abs(rng.normal(0.0, 0.15, kernel.bias.shape))
            kernel.bias = (sign * mag).astype(np.float32)
        x = rng.standard_normal((1, 3, 9, 9)).astype(np.float32)
        target = rng.uniform(0, 1, (1, 1, 9, 9)).astype(np.float32)

        pred, caches = network_forward(net, x)
        _, grad_loss = mse_loss(pred, target)
        grads = network_backward(net, caches, grad_loss)

        def loss():
            pred, _ = network_forward(net, x)
            return mse_loss(pred, target)[0]

        analytic_parts, numeric_parts = [], []
        for kernel, (gw, gb) in zip(net.kernels(), grads):
            for arr, analytic in ((kernel.weights, gw), (kernel.bias, gb)):
                analytic_parts.append(analytic.astype(np.float64).ravel())
                numeric_parts.append(finite_diff_grad(loss, arr).ravel())
        analytic_full = np.concatenate(analytic_parts)
        numeric_full = np.concatenate(numeric_parts)

        scale = max(
            float(np.abs(analytic_full).max()),
            float(np.abs(numeric_full).max()),
            1e-12,
        )
        suspect = np.abs(analytic_full - numeric_full) > 2e-4 * scale
        if suspect.any():
            shadow = _clone_float64(net)
            x64 = x.astype(np.float64)
            t64 = target.astype(np.float64)

            def loss64():
                pred, _ = network_forward(shadow, x64)
                return mse_loss(pred, t64)[0]

            shadow_arrays = []
            for kernel in shadow.kernels():
                shadow_arrays += [kernel.weights, kernel.bias]
            offsets = np.cumsum([0] + [a.size for a in shadow_arrays])
            for idx in np.nonzero(suspect)[0]:
                part = int(np.searchsorted(offsets, idx, side="right")) - 1
                flat = shadow_arrays[part].reshape(-1)
                numeric_full[idx] = _fd_element(loss64, flat, idx - offsets[part],
                                                step=1e-6)
        worst = max(worst, rel_error(analytic_full, numeric_full))
    return worst


def _fd_element(f, flat: np.ndarray, i: int, step: float) -> float:
    orig = flat[i]
    flat[i] = orig + step
    hi = float(flat[i])
    fp = f()
    flat[i] = orig - step
    lo = float(flat[i])
    fm = f()
    flat[i] = orig
    return (fp - fm) / (hi - lo)
