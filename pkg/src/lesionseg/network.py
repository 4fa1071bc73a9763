"""The 3-module parallel-pathway network with a final 1x1 projection.

Each module runs five pathways on its input and concatenates them along
channels, in this fixed, serialization-relevant order:

    (a) 1x1 conv
    (b) 1x1 reduce -> 3x3 conv
    (c) 1x1 reduce -> 5x5 conv
    (d) 3x3 max pool -> 1x1 conv
    (e) 3x3 avg pool -> 3x3 conv

Every convolution is followed by a ReLU. After the third module a 1x1
projection maps to a single channel and a sigmoid squashes it into (0,1),
so the output is a membership map with the same spatial size as the input:
no dense layers anywhere, any input size works.

Model files use the INSG container: magic "INSG", version u32, input
channel count u32, module count u32, then 7 u32 filter counts per module,
then the parameter arrays as little-endian float32 in pathway order
(weights then bias per kernel), final projection last.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .optim import init_weights
from .tensor_ops import (
    ContractError,
    ConvKernel,
    concat_channels,
    conv2d_same_backward,
    conv2d_same_forward,
    pool3x3_backward,
    pool3x3_forward,
    relu,
    relu_backward,
    split_channels_grad,
)


@dataclass
class InceptionConfig:
    """Filter counts for the five pathways of one module."""

    c_1x1: int
    c_3x3_reduce: int
    c_3x3: int
    c_5x5_reduce: int
    c_5x5: int
    c_pool_proj: int
    c_avg: int = 32

    def __post_init__(self):
        counts = (
            self.c_1x1,
            self.c_3x3_reduce,
            self.c_3x3,
            self.c_5x5_reduce,
            self.c_5x5,
            self.c_pool_proj,
            self.c_avg,
        )
        if any(c < 1 for c in counts):
            raise ContractError(f"all filter counts must be >= 1, got {counts}")

    @property
    def out_channels(self) -> int:
        return self.c_1x1 + self.c_3x3 + self.c_5x5 + self.c_pool_proj + self.c_avg


# Module 1 follows the classic first-stage pathway widths (64, 96->128,
# 16->32, 32) with the 32-filter average pathway appended; modules 2 and 3
# are scaled down so the whole model lands near a 294k parameter budget.
DEFAULT_MODULE_CONFIGS = (
    InceptionConfig(64, 96, 128, 16, 32, 32, 32),
    InceptionConfig(32, 24, 48, 6, 16, 16, 32),
    InceptionConfig(16, 16, 24, 4, 8, 8, 32),
)


@dataclass
class InceptionModule:
    config: InceptionConfig
    in_channels: int
    k_1x1: ConvKernel
    k_3x3_reduce: ConvKernel
    k_3x3: ConvKernel
    k_5x5_reduce: ConvKernel
    k_5x5: ConvKernel
    k_pool_proj: ConvKernel
    k_avg: ConvKernel

    def kernels(self) -> list[ConvKernel]:
        return [
            self.k_1x1,
            self.k_3x3_reduce,
            self.k_3x3,
            self.k_5x5_reduce,
            self.k_5x5,
            self.k_pool_proj,
            self.k_avg,
        ]


@dataclass
class Network:
    """Three chained modules plus the 1x1 membership projection."""

    modules: list[InceptionModule]
    final_proj: ConvKernel
    input_channels: int = 3

    def kernels(self) -> list[ConvKernel]:
        """All kernels in the documented pathway order; backward gradients
        and serialized parameter arrays are aligned with this list."""
        ks: list[ConvKernel] = []
        for m in self.modules:
            ks.extend(m.kernels())
        ks.append(self.final_proj)
        return ks


def _new_kernel(out_c, in_c, kh, kw, seed) -> ConvKernel:
    fan_in = in_c * kh * kw
    w = init_weights((out_c, in_c, kh, kw), fan_in, seed)
    return ConvKernel(w, np.zeros(out_c, dtype=np.float32))


def build_network(
    configs=DEFAULT_MODULE_CONFIGS, seed: int = 0, input_channels: int = 3
) -> Network:
    """Deterministically initialize the network for the given configs.

    Exactly three modules are expected; each module's input channel count is
    chained from the previous module's concatenated output.
    """
    configs = tuple(configs)
    if len(configs) != 3:
        raise ContractError(f"expected 3 module configs, got {len(configs)}")
    seeds = iter(np.random.SeedSequence(seed).generate_state(7 * 3 + 1))
    modules = []
    in_c = input_channels
    for cfg in configs:
        modules.append(
            InceptionModule(
                config=cfg,
                in_channels=in_c,
                k_1x1=_new_kernel(cfg.c_1x1, in_c, 1, 1, next(seeds)),
                k_3x3_reduce=_new_kernel(cfg.c_3x3_reduce, in_c, 1, 1, next(seeds)),
                k_3x3=_new_kernel(cfg.c_3x3, cfg.c_3x3_reduce, 3, 3, next(seeds)),
                k_5x5_reduce=_new_kernel(cfg.c_5x5_reduce, in_c, 1, 1, next(seeds)),
                k_5x5=_new_kernel(cfg.c_5x5, cfg.c_5x5_reduce, 5, 5, next(seeds)),
                k_pool_proj=_new_kernel(cfg.c_pool_proj, in_c, 1, 1, next(seeds)),
                k_avg=_new_kernel(cfg.c_avg, in_c, 3, 3, next(seeds)),
            )
        )
        in_c = cfg.out_channels
    final_proj = _new_kernel(1, in_c, 1, 1, next(seeds))
    return Network(modules, final_proj, input_channels)


def count_params(net: Network) -> int:
    """Total learnable parameters: sum of (in_c*kh*kw + 1)*out_c per kernel."""
    return sum(k.n_params() for k in net.kernels())


def module_forward(module: InceptionModule, x: np.ndarray):
    """Run the five pathways and concatenate; returns (y, cache)."""
    if x.shape[1] != module.in_channels:
        raise ContractError(
            f"input has {x.shape[1]} channels, module expects {module.in_channels}"
        )
    pre_a = conv2d_same_forward(x, module.k_1x1)
    pre_b1 = conv2d_same_forward(x, module.k_3x3_reduce)
    r_b = relu(pre_b1)
    pre_b2, col_b = conv2d_same_forward(r_b, module.k_3x3, return_col=True)
    pre_c1 = conv2d_same_forward(x, module.k_5x5_reduce)
    r_c = relu(pre_c1)
    pre_c2, col_c = conv2d_same_forward(r_c, module.k_5x5, return_col=True)
    mp, mp_cache = pool3x3_forward(x, "max")
    pre_d = conv2d_same_forward(mp, module.k_pool_proj)
    ap, ap_cache = pool3x3_forward(x, "avg")
    pre_e, col_e = conv2d_same_forward(ap, module.k_avg, return_col=True)
    y = concat_channels(
        [relu(pre_a), relu(pre_b2), relu(pre_c2), relu(pre_d), relu(pre_e)]
    )
    cache = {
        "x": x,
        "pre_a": pre_a,
        "pre_b1": pre_b1,
        "r_b": r_b,
        "pre_b2": pre_b2,
        "col_b": col_b,
        "pre_c1": pre_c1,
        "r_c": r_c,
        "pre_c2": pre_c2,
        "col_c": col_c,
        "mp": mp,
        "mp_cache": mp_cache,
        "pre_d": pre_d,
        "ap": ap,
        "ap_cache": ap_cache,
        "pre_e": pre_e,
        "col_e": col_e,
    }
    return y, cache


def module_backward(module: InceptionModule, cache: dict, grad_y: np.ndarray):
    """Gradients of module_forward: returns (grad_x, [(gw, gb) per kernel])."""
    cfg = module.config
    x = cache["x"]
    g_a, g_b, g_c, g_d, g_e = split_channels_grad(
        grad_y, [cfg.c_1x1, cfg.c_3x3, cfg.c_5x5, cfg.c_pool_proj, cfg.c_avg]
    )

    g = relu_backward(cache["pre_a"], g_a)
    gx_a, gw_1x1, gb_1x1 = conv2d_same_backward(x, module.k_1x1, g)

    g = relu_backward(cache["pre_b2"], g_b)
    g_rb, gw_3x3, gb_3x3 = conv2d_same_backward(
        cache["r_b"], module.k_3x3, g, x_col=cache["col_b"]
    )
    g = relu_backward(cache["pre_b1"], g_rb)
    gx_b, gw_3r, gb_3r = conv2d_same_backward(x, module.k_3x3_reduce, g)

    g = relu_backward(cache["pre_c2"], g_c)
    g_rc, gw_5x5, gb_5x5 = conv2d_same_backward(
        cache["r_c"], module.k_5x5, g, x_col=cache["col_c"]
    )
    g = relu_backward(cache["pre_c1"], g_rc)
    gx_c, gw_5r, gb_5r = conv2d_same_backward(x, module.k_5x5_reduce, g)

    g = relu_backward(cache["pre_d"], g_d)
    g_mp, gw_pp, gb_pp = conv2d_same_backward(cache["mp"], module.k_pool_proj, g)
    gx_d = pool3x3_backward(cache["mp_cache"], g_mp)

    g = relu_backward(cache["pre_e"], g_e)
    g_ap, gw_avg, gb_avg = conv2d_same_backward(
        cache["ap"], module.k_avg, g, x_col=cache["col_e"]
    )
    gx_e = pool3x3_backward(cache["ap_cache"], g_ap)

    grad_x = gx_a + gx_b + gx_c + gx_d + gx_e
    grads = [
        (gw_1x1, gb_1x1),
        (gw_3r, gb_3r),
        (gw_3x3, gb_3x3),
        (gw_5r, gb_5r),
        (gw_5x5, gb_5x5),
        (gw_pp, gb_pp),
        (gw_avg, gb_avg),
    ]
    return grad_x, grads


def _sigmoid(x: np.ndarray) -> np.ndarray:
    y = 1.0 / (1.0 + np.exp(-x.astype(np.float64)))
    # Keep the output strictly inside (0,1) at storage precision.
    eps = np.finfo(x.dtype).eps
    return np.clip(y, eps, 1.0 - eps).astype(x.dtype)


def network_forward(net: Network, x: np.ndarray):
    """Full forward pass: three modules, 1x1 projection, sigmoid.

    Input must have net.input_channels channels; output is (n, 1, h, w) with
    values strictly inside (0,1) for any spatial size h, w >= 1.
    """
    if x.ndim != 4 or x.shape[1] != net.input_channels:
        raise ContractError(
            f"expected (n, {net.input_channels}, h, w) input, got {x.shape}"
        )
    caches = []
    z = x
    for m in net.modules:
        z, cache = module_forward(m, z)
        caches.append(cache)
    pre = conv2d_same_forward(z, net.final_proj)
    membership = _sigmoid(pre)
    caches.append({"z": z, "membership": membership})
    return membership, caches


def network_backward(net: Network, caches: list, grad_membership: np.ndarray):
    """Exact parameter gradients; returned list aligns with net.kernels()."""
    final = caches[-1]
    if grad_membership.shape != final["membership"].shape:
        raise ContractError(
            f"grad shape {grad_membership.shape} does not match forward output "
            f"{final['membership'].shape}"
        )
    mem = final["membership"]
    g = (grad_membership * mem * (1.0 - mem)).astype(grad_membership.dtype)
    g, gw_proj, gb_proj = conv2d_same_backward(final["z"], net.final_proj, g)
    per_module = []
    for m, cache in zip(reversed(net.modules), reversed(caches[:-1])):
        g, grads = module_backward(m, cache, g)
        per_module.append(grads)
    out = []
    for grads in reversed(per_module):
        out.extend(grads)
    out.append((gw_proj, gb_proj))
    return out


_MAGIC = b"INSG"
_VERSION = 1


def save_network(path: str, net: Network) -> None:
    """Write the INSG container atomically (temp file + rename)."""
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<III", _VERSION, net.input_channels, len(net.modules))
    for m in net.modules:
        c = m.config
        blob += struct.pack(
            "<7I",
            c.c_1x1,
            c.c_3x3_reduce,
            c.c_3x3,
            c.c_5x5_reduce,
            c.c_5x5,
            c.c_pool_proj,
            c.c_avg,
        )
    for k in net.kernels():
        blob += np.ascontiguousarray(k.weights, dtype="<f4").tobytes()
        blob += np.ascontiguousarray(k.bias, dtype="<f4").tobytes()
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_network(path: str) -> Network:
    """Read an INSG container; inverse of save_network, bit-exact."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise ContractError(f"{path}: not an INSG model file")
    version, input_channels, n_modules = struct.unpack_from("<III", blob, 4)
    if version != _VERSION:
        raise ContractError(f"{path}: unsupported INSG version {version}")
    off = 16
    configs = []
    for _ in range(n_modules):
        counts = struct.unpack_from("<7I", blob, off)
        off += 28
        configs.append(InceptionConfig(*counts))
    net = build_network(configs, seed=0, input_channels=input_channels)

    def read_into(kernel: ConvKernel):
        nonlocal off
        for arr_name in ("weights", "bias"):
            arr = getattr(kernel, arr_name)
            n = arr.size
            if off + 4 * n > len(blob):
                raise ContractError(f"{path}: truncated parameter block")
            raw = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
            setattr(kernel, arr_name, raw.reshape(arr.shape).astype(np.float32))
            off += 4 * n

    for k in net.kernels():
        read_into(k)
    if off != len(blob):
        raise ContractError(f"{path}: trailing bytes after parameter block")
    return net
