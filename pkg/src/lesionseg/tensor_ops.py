"""Dense 4-D tensor kernels: same-padded convolution, 3x3 stride-1 pooling,
ReLU, and channel concatenation, each with a hand-written backward pass.

A "Tensor4" is a plain numpy array of shape (batch, channel, row, col),
C-contiguous so the column index varies fastest, then row, channel, batch.
Production feature maps are float32; every op follows its input dtype, so
running with float64 arrays gives the full-precision shadow computation the
finite-difference oracles check against.

Padding conventions, fixed here and relied on everywhere downstream:
zero padding for convolution, -inf padding for max pooling, and average
pooling divides by the count of in-bounds taps rather than a constant 9.
Max-pool ties go to the first tap in row-major window order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


def check_tensor4(x: np.ndarray, name: str = "tensor") -> None:
    if x.ndim != 4:
        raise ContractError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ContractError(f"{name} has an empty dimension: {x.shape}")


@dataclass
class ConvKernel:
    """Weights and per-output-channel bias of one 2-D convolution.

    weights has shape (out_c, in_c, kh, kw) with kh, kw odd; odd extents are
    what make symmetric same-padding possible.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ContractError(f"kernel weights must be 4-D, got {self.weights.shape}")
        out_c, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ContractError(f"kernel extent must be odd, got {kh}x{kw}")
        if self.bias.shape != (out_c,):
            raise ContractError(
                f"bias shape {self.bias.shape} does not match out_c={out_c}"
            )

    @property
    def out_c(self) -> int:
        return self.weights.shape[0]

    @property
    def in_c(self) -> int:
        return self.weights.shape[1]

    @property
    def kh(self) -> int:
        return self.weights.shape[2]

    @property
    def kw(self) -> int:
        return self.weights.shape[3]

    def n_params(self) -> int:
        return self.weights.size + self.bias.size


def _conv1x1(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Pointwise convolution as one batched matmul, no data reordering."""
    n, c, h, w = x.shape
    out_c = weights.shape[0]
    wmat = weights.reshape(out_c, c)
    y = np.matmul(wmat, x.reshape(n, c, h * w))
    y += bias[:, None]
    return y.reshape(n, out_c, h, w)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Unfold zero-padded same-size windows into a (kh*kw*c, n*h*w) matrix.

    Row k = (di*kw + dj)*c + ci holds input channel ci shifted by window tap
    (di, dj); the tap loop copies plane-contiguous blocks, which is where a
    naive strided-view reshape loses an order of magnitude.
    """
    n, c, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    col = np.empty((kh, kw, c, n, h, w), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            col[di, dj] = xp[:, :, di : di + h, dj : dj + w].transpose(1, 0, 2, 3)
    return col.reshape(kh * kw * c, n * h * w)


def _conv_gemm(x: np.ndarray, weights: np.ndarray, bias, col=None):
    """Correlate via im2col + GEMM; returns (y, col) with y (n, out_c, h, w).

    col, the unfolded input, is returned so callers holding activations for
    a backward pass can hand it back to conv2d_same_backward instead of
    paying for the unfold twice; it is None on the 1x1 fast path.
    """
    n, c, h, w = x.shape
    out_c, _, kh, kw = weights.shape
    if kh == 1 and kw == 1:
        b = bias if bias is not None else np.zeros(out_c, dtype=weights.dtype)
        return _conv1x1(x, weights, b), None
    if col is None:
        col = _im2col(x, kh, kw)
    wmat = weights.transpose(2, 3, 1, 0).reshape(kh * kw * c, out_c)
    y = col.T @ wmat
    if bias is not None:
        y += bias
    y = y.reshape(n, h, w, out_c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), col


def conv2d_same_forward(
    x: np.ndarray, k: ConvKernel, return_col: bool = False
):
    """Same-padded stride-1 cross-correlation of x with k plus bias.

    Output shape is (x.n, k.out_c, x.h, x.w): spatial dims are preserved,
    which is the contract the fully-convolutional network depends on. With
    return_col=True also returns the unfolded input for reuse in backward.
    """
    check_tensor4(x, "x")
    if x.shape[1] != k.in_c:
        raise ContractError(f"input has {x.shape[1]} channels, kernel expects {k.in_c}")
    dtype = np.result_type(x.dtype, k.weights.dtype)
    y, col = _conv_gemm(
        x.astype(dtype, copy=False),
        k.weights.astype(dtype, copy=False),
        k.bias.astype(dtype, copy=False),
    )
    return (y, col) if return_col else y


def conv2d_same_backward(
    x: np.ndarray, k: ConvKernel, grad_out: np.ndarray, x_col: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of conv2d_same_forward.

    Returns (grad_x, grad_w, grad_b). grad_x is the same-padded correlation
    of grad_out with the spatially flipped, channel-transposed kernel;
    grad_w correlates the unfolded input with grad_out; grad_b sums
    grad_out over batch and space. Pass the forward's x_col to skip
    re-unfolding the input.
    """
    check_tensor4(grad_out, "grad_out")
    n, c, h, w = x.shape
    if grad_out.shape != (n, k.out_c, h, w):
        raise ContractError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(n, k.out_c, h, w)}"
        )
    dtype = np.result_type(x.dtype, k.weights.dtype)
    xd = x.astype(dtype, copy=False)
    wd = k.weights.astype(dtype, copy=False)
    god = grad_out.astype(dtype, copy=False)
    out_c, _, kh, kw = wd.shape

    grad_b = god.sum(axis=(0, 2, 3))

    if kh == 1 and kw == 1:
        # grad_w[o, c] = sum_n go[n,o,:] . x[n,c,:]
        gw = np.matmul(
            god.reshape(n, out_c, h * w), xd.reshape(n, c, h * w).transpose(0, 2, 1)
        ).sum(axis=0)
        grad_w = gw.reshape(k.weights.shape)
    else:
        col = x_col if x_col is not None else _im2col(xd, kh, kw)
        go_flat = god.transpose(1, 0, 2, 3).reshape(out_c, n * h * w)
        gw = go_flat @ col.T  # (out_c, kh*kw*c)
        grad_w = np.ascontiguousarray(
            gw.reshape(out_c, kh, kw, c).transpose(0, 3, 1, 2)
        )

    # grad_x = conv(grad_out, W flipped in space, transposed in channels)
    w_flip = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    grad_x, _ = _conv_gemm(god, w_flip, None)
    return grad_x, grad_w, grad_b


@dataclass
class PoolCache:
    """What pool3x3_backward needs from the matching forward call."""

    mode: str
    x: np.ndarray  # forward input
    y: np.ndarray | None  # forward output; identifies max winners
    counts: np.ndarray | None  # (h, w) in-bounds tap counts; avg mode only


def _inbound_counts(h: int, w: int, dtype) -> np.ndarray:
    """Per-pixel count of the 3x3 window taps that fall inside the image."""
    ch = np.full(h, 3.0)
    ch[0] -= 1
    ch[-1] -= 1
    cw = np.full(w, 3.0)
    cw[0] -= 1
    cw[-1] -= 1
    return np.outer(ch, cw).astype(dtype)


def _boxsum3(x: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 neighborhood sum, fixed tap order."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    out = np.zeros((n, c, h, w), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            out += xp[:, :, di : di + h, dj : dj + w]
    return out


def _pad_neg_inf(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.full((n, c, h + 2, w + 2), -np.inf, dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    return xp


def pool3x3_forward(x: np.ndarray, mode: str) -> tuple[np.ndarray, PoolCache]:
    """3x3 stride-1 pooling preserving spatial dims.

    mode "max" pads with -inf; mode "avg" divides each window sum by the
    number of in-bounds taps, so constant inputs stay constant at borders.
    """
    check_tensor4(x, "x")
    if mode not in ("max", "avg"):
        raise ContractError(f"unknown pool mode {mode!r}")
    n, c, h, w = x.shape
    if mode == "max":
        xp = _pad_neg_inf(x)
        y = xp[:, :, 0:h, 0:w].copy()
        for di in range(3):
            for dj in range(3):
                if di == 0 and dj == 0:
                    continue
                np.maximum(y, xp[:, :, di : di + h, dj : dj + w], out=y)
        return y, PoolCache("max", x, y, None)
    counts = _inbound_counts(h, w, x.dtype)
    y = _boxsum3(x) / counts
    return y, PoolCache("avg", x, None, counts)


def pool3x3_backward(cache: PoolCache, grad_out: np.ndarray) -> np.ndarray:
    """Route gradients back through a pool3x3_forward call.

    Max pooling sends each upstream value to the first window tap (row-major
    order) holding the maximum; average pooling spreads grad/count uniformly
    over the in-bounds taps, which is again a 3x3 box sum by symmetry of
    window membership.
    """
    check_tensor4(grad_out, "grad_out")
    if grad_out.shape != cache.x.shape:
        raise ContractError(
            f"grad_out shape {grad_out.shape} does not match pooled {cache.x.shape}"
        )
    n, c, h, w = cache.x.shape
    if cache.mode == "avg":
        return _boxsum3(grad_out / cache.counts)
    xp = _pad_neg_inf(cache.x)
    gxp = np.zeros((n, c, h + 2, w + 2), dtype=grad_out.dtype)
    unclaimed = np.ones(grad_out.shape, dtype=bool)
    for di in range(3):
        for dj in range(3):
            tap = xp[:, :, di : di + h, dj : dj + w]
            win = unclaimed & (tap == cache.y)
            if win.any():
                gxp[:, :, di : di + h, dj : dj + w] += np.where(win, grad_out, 0)
                unclaimed &= ~win
    return np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1])


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0, zero where x <= 0."""
    if x.shape != grad_out.shape:
        raise ContractError(
            f"grad_out shape {grad_out.shape} does not match input {x.shape}"
        )
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate feature maps along the channel axis in argument order."""
    if not parts:
        raise ContractError("concat_channels needs at least one part")
    first = parts[0]
    for p in parts[1:]:
        if p.shape[0] != first.shape[0] or p.shape[2:] != first.shape[2:]:
            raise ContractError(
                f"part shape {p.shape} does not align with {first.shape}"
            )
    return np.ascontiguousarray(np.concatenate(parts, axis=1))


def split_channels_grad(
    grad_out: np.ndarray, part_channel_counts: list[int]
) -> list[np.ndarray]:
    """Exact inverse of concat_channels on the channel axis."""
    check_tensor4(grad_out, "grad_out")
    if sum(part_channel_counts) != grad_out.shape[1]:
        raise ContractError(
            f"channel counts {part_channel_counts} do not sum to {grad_out.shape[1]}"
        )
    out = []
    start = 0
    for nc in part_channel_counts:
        out.append(np.ascontiguousarray(grad_out[:, start : start + nc]))
        start += nc
    return out
