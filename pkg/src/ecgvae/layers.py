"""Numeric layer kernels: forward and backward passes at 64-bit precision.

Tensors are plain numpy arrays, channels last: convolutional layers see
(batch, time, channels), dense layers see (batch, features). Each layer
owns its trainable parameter blocks (``params``), matching gradient
buffers (``grads``) and non-trainable state (``state``, batch-norm
running statistics only). ``forward`` returns the output plus an opaque
cache consumed by ``backward``.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidConfig, ShapeMismatch

# sigmoid outputs are kept strictly inside (0, 1) so log-loss never sees 0 or 1
SIGMOID_FLOOR = 1e-300
SIGMOID_CEIL = float(np.nextafter(1.0, 0.0))

BN_MOMENTUM = 0.99
BN_EPSILON = 1e-3


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int
                   ) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Common storage for parameters, gradients, and running state."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def hyperparams(self) -> dict:
        return {}

    def forward(self, x, training: bool, rng):
        raise NotImplementedError

    def backward(self, grad, cache):
        raise NotImplementedError


class Conv1D(Layer):
    """Same-padded 1D convolution, stride 1, odd kernel size."""

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise InvalidConfig(f"conv kernel must be odd and >= 1, got {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = kernel * in_channels
        fan_out = kernel * out_channels
        self._register("w", glorot_uniform(rng, (kernel, in_channels, out_channels),
                                           fan_in, fan_out))
        self._register("b", np.zeros(out_channels))

    def hyperparams(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel}

    def forward(self, x, training, rng):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(
                f"conv1d expects (batch, time, {self.in_channels}), got {x.shape}"
            )
        batch, time, _ = x.shape
        pad = self.kernel // 2
        xp = np.zeros((batch, time + 2 * pad, self.in_channels))
        xp[:, pad:pad + time, :] = x
        w = self.params["w"]
        y = np.broadcast_to(self.params["b"], (batch, time, self.out_channels)).copy()
        for k in range(self.kernel):
            y += xp[:, k:k + time, :] @ w[k]
        return y, xp

    def backward(self, grad, cache):
        xp = cache
        batch, time, _ = grad.shape
        pad = self.kernel // 2
        w = self.params["w"]
        flat_grad = grad.reshape(batch * time, self.out_channels)
        for k in range(self.kernel):
            window = xp[:, k:k + time, :].reshape(batch * time, self.in_channels)
            self.grads["w"][k] = window.T @ flat_grad
        self.grads["b"][...] = grad.sum(axis=(0, 1))
        dxp = np.zeros_like(xp)
        for k in range(self.kernel):
            dxp[:, k:k + time, :] += grad @ w[k].T
        return dxp[:, pad:pad + time, :]


class BatchNorm(Layer):
    """Per-channel batch normalization over all leading axes.

    Training mode normalizes with batch statistics and updates the running
    exponential averages; inference mode uses the running statistics.
    """

    kind = "batch_norm"

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM,
                 epsilon: float = BN_EPSILON):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self._register("gamma", np.ones(channels))
        self._register("beta", np.zeros(channels))
        self.state["running_mean"] = np.zeros(channels)
        self.state["running_var"] = np.ones(channels)

    def hyperparams(self):
        return {"channels": self.channels, "momentum": self.momentum,
                "epsilon": self.epsilon}

    def forward(self, x, training, rng):
        if x.shape[-1] != self.channels:
            raise ShapeMismatch(
                f"batch_norm expects {self.channels} channels, got {x.shape}"
            )
        n = x.size // self.channels
        if training:
            # single pass over the (large) batch: E[x] and E[x^2]
            flat = x.reshape(n, self.channels)
            mean = flat.sum(axis=0) / n
            var = np.einsum("nc,nc->c", flat, flat) / n - mean ** 2
            np.maximum(var, 0.0, out=var)
            m = self.momentum
            self.state["running_mean"][...] = m * self.state["running_mean"] + (1 - m) * mean
            self.state["running_var"][...] = m * self.state["running_var"] + (1 - m) * var
        else:
            mean = self.state["running_mean"]
            var = self.state["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        y = self.params["gamma"] * xhat + self.params["beta"]
        return y, (xhat, inv_std, training, n)

    def backward(self, grad, cache):
        xhat, inv_std, training, n = cache
        g2 = grad.reshape(n, self.channels)
        x2 = xhat.reshape(n, self.channels)
        self.grads["gamma"][...] = np.einsum("nc,nc->c", g2, x2)
        self.grads["beta"][...] = g2.sum(axis=0)
        gamma = self.params["gamma"]
        if not training:
            return grad * (gamma * inv_std)
        s1 = gamma * self.grads["beta"]                  # sum of dxhat
        s2 = gamma * self.grads["gamma"]                 # sum of dxhat * xhat
        dxhat = grad * gamma
        return (inv_std / n) * (n * dxhat - s1 - xhat * s2)


class MaxPool1D(Layer):
    """Non-overlapping temporal max pooling; time must divide evenly."""

    kind = "max_pool"

    def __init__(self, pool: int):
        super().__init__()
        if pool < 1:
            raise InvalidConfig(f"pool size must be >= 1, got {pool}")
        self.pool = pool

    def hyperparams(self):
        return {"pool": self.pool}

    def forward(self, x, training, rng):
        batch, time, ch = x.shape
        if time % self.pool:
            raise ShapeMismatch(f"time {time} not divisible by pool {self.pool}")
        if self.pool == 2:
            left = x[:, 0::2, :]
            right = x[:, 1::2, :]
            take_left = left >= right     # ties route to the first position
            y = np.where(take_left, left, right)
            return y, (take_left, x.shape)
        windows = x.reshape(batch, time // self.pool, self.pool, ch)
        idx = windows.argmax(axis=2)
        y = np.take_along_axis(windows, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return y, (idx, x.shape)

    def backward(self, grad, cache):
        idx, shape = cache
        batch, time, ch = shape
        if self.pool == 2:
            take_left = idx
            dx = np.zeros(shape)
            dx[:, 0::2, :] = np.where(take_left, grad, 0.0)
            dx[:, 1::2, :] = np.where(take_left, 0.0, grad)
            return dx
        dwin = np.zeros((batch, time // self.pool, self.pool, ch))
        np.put_along_axis(dwin, idx[:, :, None, :], grad[:, :, None, :], axis=2)
        return dwin.reshape(batch, time, ch)


class Dropout(Layer):
    """Inverted-scaling dropout; identity at inference."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise InvalidConfig(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def hyperparams(self):
        return {"rate": self.rate}

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            return x, None
        keep = rng.random(x.shape, dtype=np.float32) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        return x * keep * scale, keep

    def backward(self, grad, cache):
        if cache is None:
            return grad
        return grad * cache * (1.0 / (1.0 - self.rate))


class GlobalAvgPool(Layer):
    """Mean over the time axis: (batch, time, ch) -> (batch, ch)."""

    kind = "global_avg_pool"

    def forward(self, x, training, rng):
        return x.mean(axis=1), x.shape[1]

    def backward(self, grad, cache):
        time = cache
        return np.repeat(grad[:, None, :], time, axis=1) / time


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator):
        super().__init__()
        if out_features < 1:
            raise InvalidConfig(f"dense units must be >= 1, got {out_features}")
        self.in_features = in_features
        self.out_features = out_features
        self._register("w", glorot_uniform(rng, (in_features, out_features),
                                           in_features, out_features))
        self._register("b", np.zeros(out_features))

    def hyperparams(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x, training, rng):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(
                f"dense expects (batch, {self.in_features}), got {x.shape}"
            )
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, grad, cache):
        x = cache
        self.grads["w"][...] = x.T @ grad
        self.grads["b"][...] = grad.sum(axis=0)
        return grad @ self.params["w"].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad, cache):
        return grad * cache


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training, rng):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        np.clip(out, SIGMOID_FLOOR, SIGMOID_CEIL, out=out)
        return out, out

    def backward(self, grad, cache):
        y = cache
        return grad * y * (1.0 - y)
