"""Training-side numerics: mean squared error over membership patches,
bias-corrected Adam, and deterministic He-style weight initialization.

Everything here is a pure function of its inputs; the caller owns the
single-writer update loop. Adam state carried between steps can be
serialized with state_to_bytes/state_from_bytes and round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor_ops import ContractError


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every element, and its gradient wrt pred.

    loss = mean((pred - target)^2); grad = 2*(pred - target)/element_count.
    The loss is accumulated in float64 regardless of input dtype.
    """
    if pred.shape != target.shape:
        raise ContractError(
            f"pred shape {pred.shape} does not match target {target.shape}"
        )
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype)


@dataclass
class AdamHyper:
    """Adam hyperparameters; defaults are the optimizer's published ones."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ContractError(
                f"betas must lie in (0,1), got {self.beta1}, {self.beta2}"
            )
        if self.eps <= 0:
            raise ContractError(f"eps must be > 0, got {self.eps}")


@dataclass
class AdamState:
    """First/second moment buffers and the completed-step count."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(
    param: np.ndarray, grad: np.ndarray, state: AdamState, hyper: AdamHyper
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new param and new state.

    Nothing is mutated in place. The update direction is scaled by lr as the
    final multiply, so doubling lr exactly doubles the applied delta.
    """
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ContractError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}"
        )
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * (grad * grad)
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    delta = hyper.lr * (m_hat / (np.sqrt(v_hat) + hyper.eps))
    return (param - delta).astype(param.dtype), AdamState(m, v, t)


_STATE_MAGIC = b"ADST"


def state_to_bytes(state: AdamState) -> bytes:
    """Serialize AdamState: magic, step count, dtype char, ndim, shape, m, v."""
    dt = state.m.dtype
    header = _STATE_MAGIC + struct.pack(
        "<QcB", state.t, dt.char.encode(), state.m.ndim
    )
    header += struct.pack(f"<{state.m.ndim}I", *state.m.shape)
    return header + state.m.tobytes() + state.v.tobytes()


def state_from_bytes(blob: bytes) -> AdamState:
    if blob[:4] != _STATE_MAGIC:
        raise ContractError("not a serialized Adam state")
    t, dtchar, ndim = struct.unpack_from("<QcB", blob, 4)
    shape = struct.unpack_from(f"<{ndim}I", blob, 13)
    dt = np.dtype(dtchar.decode())
    count = int(np.prod(shape))
    off = 13 + 4 * ndim
    m = np.frombuffer(blob, dtype=dt, count=count, offset=off).reshape(shape)
    v = np.frombuffer(blob, dtype=dt, count=count, offset=off + count * dt.itemsize)
    return AdamState(m.copy(), v.reshape(shape).copy(), t)


def init_weights(shape: tuple, fan_in: int, rng_seed: int) -> np.ndarray:
    """He-style scaled-uniform draw, deterministic given the seed.

    Samples uniform on [-b, b] with b = sqrt(6/fan_in), giving zero mean and
    variance 2/fan_in — the right scale when every convolution is followed
    by a ReLU. Returns float32.
    """
    if fan_in < 1:
        raise ContractError(f"fan_in must be >= 1, got {fan_in}")
    rng = np.random.default_rng(rng_seed)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
