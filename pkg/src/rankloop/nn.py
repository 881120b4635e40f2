"""Differentiable layer primitives with explicit forward and backward passes.

Activations travel as (N, C, H, W) float64 arrays. Every layer exposes

    forward(x, mode) -> (y, cache)
    backward(cache, dy) -> (param_grads, dx)

where ``param_grads`` mirrors the layer's ``params`` dict key for key.
Convolution is evaluated through an im2col contraction whose reduction axis
is ordered (channel, kernel_row, kernel_col); for fixed inputs the result is
bitwise reproducible.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NumericError, ShapeError


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check_tensor4(x, name="input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected (N, C, H, W), got shape {x.shape}")
    return x


class Conv2d:
    """2-D convolution (cross-correlation) with zero padding."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, pad=0, *, rng=None, slope=0.0):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        if rng is None:
            weight = np.zeros((out_ch, in_ch, kernel, kernel))
        else:
            # He initialization with LeakyReLU gain
            fan_in = in_ch * kernel * kernel
            std = np.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in))
            weight = rng.normal(0.0, std, size=(out_ch, in_ch, kernel, kernel))
        self.params = {"weight": weight, "bias": np.zeros(out_ch)}

    def _im2col(self, xp, out_h, out_w):
        n, c, _, _ = xp.shape
        k, s = self.kernel, self.stride
        cols = np.empty((n, c, k, k, out_h, out_w))
        for kh in range(k):
            for kw in range(k):
                cols[:, :, kh, kw] = xp[:, :, kh:kh + s * out_h:s, kw:kw + s * out_w:s]
        return cols.reshape(n, c * k * k, out_h * out_w)

    def forward(self, x, mode="train"):
        x = _check_tensor4(x)
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} channels, got {c}")
        out_h = conv_out_size(h, self.kernel, self.stride, self.pad)
        out_w = conv_out_size(w, self.kernel, self.stride, self.pad)
        if out_h < 1 or out_w < 1:
            raise ShapeError(f"conv input {h}x{w} too small for kernel {self.kernel}")
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = self._im2col(xp, out_h, out_w)
        w_flat = self.params["weight"].reshape(self.out_ch, -1)
        y = np.matmul(w_flat[None], cols)  # (N, out_ch, out_h*out_w)
        y += self.params["bias"][None, :, None]
        y = y.reshape(n, self.out_ch, out_h, out_w)
        return y, (x.shape, cols)

    def backward(self, cache, dy):
        x_shape, cols = cache
        n, _, h, w = x_shape
        dy = _check_tensor4(dy, "dy")
        out_h, out_w = dy.shape[2], dy.shape[3]
        dy_flat = dy.reshape(n, self.out_ch, out_h * out_w)
        dw = np.einsum("nop,nfp->of", dy_flat, cols).reshape(self.params["weight"].shape)
        db = dy_flat.sum(axis=(0, 2))
        w_flat = self.params["weight"].reshape(self.out_ch, -1)
        dcols = np.matmul(w_flat.T[None], dy_flat)  # (N, C*k*k, P)
        k, s, p = self.kernel, self.stride, self.pad
        dcols = dcols.reshape(n, self.in_ch, k, k, out_h, out_w)
        dxp = np.zeros((n, self.in_ch, h + 2 * p, w + 2 * p))
        for kh in range(k):
            for kw in range(k):
                dxp[:, :, kh:kh + s * out_h:s, kw:kw + s * out_w:s] += dcols[:, :, kh, kw]
        dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        return {"weight": dw, "bias": db}, dx


class BatchNorm2d:
    """Per-channel batch normalization with EMA running statistics.

    Train mode normalizes by batch statistics (biased variance) and updates
    the running buffers; eval mode normalizes by the stored buffers. Train
    mode needs batch size >= 2.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def forward(self, x, mode="train"):
        x = _check_tensor4(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if mode == "train":
            if x.shape[0] < 2:
                raise ShapeError("train-mode batchnorm requires batch size >= 2")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = gamma * xhat + beta
        return y, (xhat, inv_std, mode)

    def backward(self, cache, dy):
        xhat, inv_std, mode = cache
        dy = _check_tensor4(dy, "dy")
        dgamma = (dy * xhat).sum(axis=(0, 2, 3))
        dbeta = dy.sum(axis=(0, 2, 3))
        gamma = self.params["gamma"][None, :, None, None]
        dxhat = dy * gamma
        if mode == "train":
            # full backward through the batch statistics
            m_count = dy.shape[0] * dy.shape[2] * dy.shape[3]
            sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = (inv_std[None, :, None, None] / m_count) * (
                m_count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return {"gamma": dgamma, "beta": dbeta}, dx


class LeakyReLU:
    """Elementwise max(x, slope*x); works on arrays of any shape."""

    def __init__(self, slope=0.2):
        self.slope = slope
        self.params = {}

    def forward(self, x, mode="train"):
        x = np.asarray(x, dtype=np.float64)
        y = np.where(x >= 0, x, self.slope * x)
        return y, x >= 0

    def backward(self, cache, dy):
        dx = np.where(cache, dy, self.slope * np.asarray(dy, dtype=np.float64))
        return {}, dx


class GlobalAvgPool:
    """(N, C, H, W) -> (N, C) spatial mean; makes the head size-agnostic."""

    def __init__(self):
        self.params = {}

    def forward(self, x, mode="train"):
        x = _check_tensor4(x)
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, cache, dy):
        n, c, h, w = cache
        dy = np.asarray(dy, dtype=np.float64).reshape(n, c)
        dx = np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).copy()
        return {}, dx


class Linear:
    """Fully connected layer on (N, F) activations."""

    def __init__(self, in_features, out_features, *, rng=None, slope=0.0):
        if rng is None:
            weight = np.zeros((in_features, out_features))
        else:
            std = np.sqrt(2.0 / ((1.0 + slope ** 2) * in_features))
            weight = rng.normal(0.0, std, size=(in_features, out_features))
        self.params = {"weight": weight, "bias": np.zeros(out_features)}

    def forward(self, x, mode="train"):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.params["weight"].shape[0]:
            raise ShapeError(
                f"linear expects (N, {self.params['weight'].shape[0]}), got {x.shape}")
        # row-at-a-time keeps each sample's result independent of batch size
        # (a single batched GEMM picks different BLAS kernels per shape)
        w, b = self.params["weight"], self.params["bias"]
        y = np.empty((x.shape[0], w.shape[1]))
        for i in range(x.shape[0]):
            y[i] = x[i] @ w + b
        return y, x

    def backward(self, cache, dy):
        x = cache
        dy = np.asarray(dy, dtype=np.float64)
        dw = x.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.params["weight"].T
        return {"weight": dw, "bias": db}, dx


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, weight_decay: float = 0.0,
              betas=(0.9, 0.999), eps=1e-8) -> None:
    """One in-place Adam update with decoupled weight decay.

    Weight decay shrinks parameters directly (p *= 1 - lr*wd) before the
    moment update; it is not folded into the gradient.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {key!r}; update aborted")
    b1, b2 = betas
    state.step += 1
    t = state.step
    for key in params:
        g = grads[key]
        p = params[key]
        if weight_decay:
            p *= (1.0 - lr * weight_decay)
        state.m[key] = b1 * state.m[key] + (1 - b1) * g
        state.v[key] = b2 * state.v[key] + (1 - b2) * (g * g)
        m_hat = state.m[key] / (1 - b1 ** t)
        v_hat = state.v[key] / (1 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)
