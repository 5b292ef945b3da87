"""Minimal differentiable layers with hand-written backward passes.

Everything is plain numpy. A layer caches whatever it needs during
forward and consumes the cache on the matching backward call; parameter
gradients accumulate until zero_grad. Weights use uniform Glorot init
(+-sqrt(6/(fan_in+fan_out))), biases start at zero.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not agree."""


class ParamTensor:
    """One named parameter with its gradient and Adam state."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    def zero_grad(self) -> None:
        self.grad[...] = 0

    @property
    def size(self) -> int:
        return self.value.size


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    """Affine map y = x @ W + b over the last axis."""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng, dtype=np.float32):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = ParamTensor(
            f"{name}.weight", glorot_uniform((in_dim, out_dim), in_dim, out_dim, rng, dtype)
        )
        self.bias = ParamTensor(f"{name}.bias", np.zeros(out_dim, dtype=dtype))
        self._x: np.ndarray | None = None

    def params(self) -> list[ParamTensor]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name}: expected (batch, {self.in_dim}), got {x.shape}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._x
        if x is None:
            raise RuntimeError(f"{self.name}: backward before forward")
        if gy.shape != (x.shape[0], self.out_dim):
            raise ShapeError(f"{self.name}: upstream gradient shape {gy.shape}")
        self.weight.grad += x.T @ gy
        self.bias.grad += gy.sum(axis=0)
        self._x = None
        return gy @ self.weight.value.T


class Conv1d:
    """Cross-correlation over time, stride 1, no padding.

    Input (batch, in_channels, time), output (batch, out_channels,
    time - kernel + 1).
    """

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int, rng,
                 dtype=np.float32):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = in_channels * kernel
        fan_out = out_channels * kernel
        self.weight = ParamTensor(
            f"{name}.weight",
            glorot_uniform((out_channels, in_channels, kernel), fan_in, fan_out, rng, dtype),
        )
        self.bias = ParamTensor(f"{name}.bias", np.zeros(out_channels, dtype=dtype))
        self._x: np.ndarray | None = None

    def params(self) -> list[ParamTensor]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected (batch, {self.in_channels}, time), got {x.shape}"
            )
        if x.shape[2] < self.kernel:
            raise ShapeError(
                f"{self.name}: time axis {x.shape[2]} shorter than kernel {self.kernel}"
            )
        self._x = x
        b, _, t = x.shape
        length = t - self.kernel + 1
        # (B, C, L, K) windows flattened so the kernel application is one matmul
        windows = np.lib.stride_tricks.sliding_window_view(x, self.kernel, axis=2)
        flat = windows.transpose(0, 2, 1, 3).reshape(b * length, -1)
        w_flat = self.weight.value.reshape(self.out_channels, -1)
        y = (flat @ w_flat.T).reshape(b, length, self.out_channels).transpose(0, 2, 1)
        return y + self.bias.value[None, :, None]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._x
        if x is None:
            raise RuntimeError(f"{self.name}: backward before forward")
        b, _, t = x.shape
        length = t - self.kernel + 1
        windows = np.lib.stride_tricks.sliding_window_view(x, self.kernel, axis=2)
        flat = windows.transpose(0, 2, 1, 3).reshape(b * length, -1)
        gy_flat = gy.transpose(1, 0, 2).reshape(self.out_channels, b * length)
        self.weight.grad += (gy_flat @ flat).reshape(self.weight.value.shape)
        self.bias.grad += gy.sum(axis=(0, 2))
        pad = self.kernel - 1
        gy_padded = np.pad(gy, ((0, 0), (0, 0), (pad, pad)))
        gy_windows = np.lib.stride_tricks.sliding_window_view(gy_padded, self.kernel, axis=2)
        gy_win_flat = gy_windows.transpose(0, 2, 1, 3).reshape(b * t, -1)
        w_rev = self.weight.value[:, :, ::-1].transpose(1, 0, 2).reshape(self.in_channels, -1)
        gx = (gy_win_flat @ w_rev.T).reshape(b, t, self.in_channels).transpose(0, 2, 1)
        self._x = None
        return gx


class SiLU:
    """Sigmoid-weighted linear unit, y = x * sigmoid(x)."""

    def __init__(self):
        self._x: np.ndarray | None = None
        self._s: np.ndarray | None = None

    def params(self) -> list[ParamTensor]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._s = sigmoid(x)
        return x * self._s

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x, s = self._x, self._s
        if x is None:
            raise RuntimeError("SiLU: backward before forward")
        self._x = self._s = None
        return gy * (s * (1.0 + x * (1.0 - s)))


class Dropout:
    """Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate)."""

    def __init__(self, rate: float, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask: np.ndarray | None = None

    def params(self) -> list[ParamTensor]:
        return []

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return gy
        return gy * self._mask


def dropout(x: np.ndarray, rate: float, training: bool, seed: int = 0) -> np.ndarray:
    """Functional dropout with its own seeded generator."""
    layer = Dropout(rate, np.random.default_rng(seed))
    return layer.forward(np.asarray(x), training)


class GlobalAvgPool1d:
    """Mean over the time axis of a (batch, channels, time) tensor."""

    def __init__(self):
        self._time: int | None = None

    def params(self) -> list[ParamTensor]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._time = x.shape[2]
        return x.mean(axis=2)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._time is None:
            raise RuntimeError("GlobalAvgPool1d: backward before forward")
        t = self._time
        self._time = None
        return np.broadcast_to(gy[:, :, None] / t, gy.shape + (t,)).copy()


def softmax2(logits: np.ndarray) -> np.ndarray:
    """Row-wise two-class softmax."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"expected (batch, 2) logits, got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _check_targets(targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets).astype(np.intp)
    if targets.size and (targets.min() < 0 or targets.max() > 1):
        raise ValueError("classification targets must be 0 or 1")
    return targets


def nll_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean negative log-likelihood of the target class."""
    probs = np.asarray(probs)
    targets = _check_targets(targets)
    if probs.shape[0] != targets.shape[0]:
        raise ShapeError(f"{probs.shape[0]} probability rows vs {targets.shape[0]} targets")
    picked = probs[np.arange(len(targets)), targets]
    return float(-np.mean(np.log(picked)))


def softmax_nll_grad(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of mean NLL w.r.t. the logits feeding softmax2: (p - onehot)/n."""
    targets = _check_targets(targets)
    grad = np.array(probs, copy=True)
    grad[np.arange(len(targets)), targets] -= 1.0
    return grad / len(targets)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} vs target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} vs target shape {target.shape}")
    return 2.0 * (pred - target) / pred.size


def collect_params(layers: Iterable) -> list[ParamTensor]:
    out: list[ParamTensor] = []
    for layer in layers:
        out.extend(layer.params())
    return out
