"""Layer kinds with explicit forward caches and backward passes.

Activations are 2-D arrays laid out (channels, time); a vector is (channels, 1).
"""
from __future__ import annotations

from typing import Any, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from classes.enums import LayerKind, PaddingMode
from errors import ShapeMismatchError, InvalidInputError

STATS_POOL_EPS = 1e-5
LAYERNORM_EPS = 1e-5


class Parameter:
    def __init__(self, name: str, value: np.ndarray, regularize: bool = True) -> None:
        self.name: str = name
        self.value: np.ndarray = value
        self.grad: np.ndarray = np.zeros_like(value)
        self.regularize: bool = regularize
        self.version: int = 0

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(name={self.name!r}, shape={self.value.shape})"

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def assign(self, value: np.ndarray) -> None:
        if value.shape != self.value.shape:
            raise ShapeMismatchError(self.name, f"cannot assign shape {value.shape} to {self.value.shape}")
        self.value[...] = value
        self.version += 1


class Layer:
    kind: LayerKind

    def __init__(self, name: str) -> None:
        self.name: str = name

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        return f"{cls_name}(name={self.name!r})"

    def parameters(self) -> List[Parameter]:
        return []

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _expect(self, x: np.ndarray, channels: Optional[int] = None, min_length: int = 1) -> None:
        if x.ndim != 2:
            raise ShapeMismatchError(self.name, f"expected (channels, time) input, got shape {x.shape}")
        if channels is not None and x.shape[0] != channels:
            raise ShapeMismatchError(self.name, f"expected {channels} channels, got {x.shape[0]}")
        if x.shape[1] < min_length:
            raise ShapeMismatchError(self.name, f"expected at least {min_length} frames, got {x.shape[1]}")


class Conv1d(Layer):
    kind = LayerKind.CONV1D

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 dilation: int = 1, stride: int = 1, padding: PaddingMode = PaddingMode.VALID,
                 dtype=np.float32) -> None:
        super().__init__(name)
        if min(in_channels, out_channels, kernel, dilation, stride) < 1:
            raise InvalidInputError(f"{name}: conv1d sizes must be positive.")
        if padding is PaddingMode.REPLICATE and stride != 1:
            raise InvalidInputError(f"{name}: replicate padding requires stride 1.")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.dilation, self.stride, self.padding = kernel, dilation, stride, padding
        scale = np.sqrt(2.0 / (in_channels * kernel))
        self.weight = Parameter(f"{name}.weight",
                                (rng.standard_normal((out_channels, in_channels, kernel)) * scale).astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels, dtype=dtype))

    @property
    def span(self) -> int:
        return self.dilation * (self.kernel - 1) + 1

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def output_length(self, length: int) -> int:
        if self.padding is PaddingMode.REPLICATE:
            return length
        return (length - self.span) // self.stride + 1

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        min_length = 1 if self.padding is PaddingMode.REPLICATE else self.span
        self._expect(x, self.in_channels, min_length)
        length = x.shape[1]
        left = right = 0
        if self.padding is PaddingMode.REPLICATE:
            total = self.span - 1
            left, right = total // 2, total - total // 2
            x = np.pad(x, ((0, 0), (left, right)), mode='edge')
        padded_length = x.shape[1]
        n_out = (padded_length - self.span) // self.stride + 1
        index = (np.arange(self.kernel) * self.dilation)[:, None] + (np.arange(n_out) * self.stride)[None, :]
        cols = x[:, index].reshape(self.in_channels * self.kernel, n_out)
        w2 = self.weight.value.reshape(self.out_channels, -1)
        y = w2 @ cols + self.bias.value[:, None]
        return y, (cols, index, padded_length, left, right, length)

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        cols, index, padded_length, left, right, length = cache
        w2 = self.weight.value.reshape(self.out_channels, -1)
        self.weight.grad += (gy @ cols.T).reshape(self.weight.value.shape)
        self.bias.grad += gy.sum(axis=1)
        gcols = (w2.T @ gy).reshape(self.in_channels, self.kernel, -1)
        gx = np.zeros((self.in_channels, padded_length), dtype=gy.dtype)
        for j in range(self.kernel):
            gx[:, index[j]] += gcols[:, j, :]
        if self.padding is PaddingMode.REPLICATE:
            inner = gx[:, left:left + length].copy()
            inner[:, 0] += gx[:, :left].sum(axis=1)
            inner[:, -1] += gx[:, left + length:].sum(axis=1)
            return inner
        return gx


class TransposedConv1d(Layer):
    kind = LayerKind.TRANSPOSED_CONV1D

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__(name)
        if min(in_channels, out_channels, kernel, stride) < 1:
            raise InvalidInputError(f"{name}: transposed-conv1d sizes must be positive.")
        self.in_channels, self.out_channels, self.kernel, self.stride = in_channels, out_channels, kernel, stride
        scale = np.sqrt(1.0 / (in_channels * max(1, kernel // stride)))
        self.weight = Parameter(f"{name}.weight",
                                (rng.standard_normal((in_channels, out_channels, kernel)) * scale).astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels, dtype=dtype))

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def output_length(self, length: int) -> int:
        return (length - 1) * self.stride + self.kernel

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x, self.in_channels)
        length = x.shape[1]
        w2 = self.weight.value.reshape(self.in_channels, -1)
        z = (w2.T @ x).reshape(self.out_channels, self.kernel, length)
        y = np.zeros((self.out_channels, self.output_length(length)), dtype=z.dtype)
        positions = np.arange(length) * self.stride
        for j in range(self.kernel):
            y[:, positions + j] += z[:, j, :]
        y += self.bias.value[:, None]
        return y, (x, positions)

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        x, positions = cache
        gz = np.stack([gy[:, positions + j] for j in range(self.kernel)], axis=1)
        gz2 = gz.reshape(self.out_channels * self.kernel, -1)
        w2 = self.weight.value.reshape(self.in_channels, -1)
        self.weight.grad += (x @ gz2.T).reshape(self.weight.value.shape)
        self.bias.grad += gy.sum(axis=1)
        return w2 @ gz2


class PointwiseLinear(Layer):
    kind = LayerKind.POINTWISE_LINEAR

    def __init__(self, name: str, in_channels: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float32) -> None:
        super().__init__(name)
        if min(in_channels, out_channels) < 1:
            raise InvalidInputError(f"{name}: pointwise-linear sizes must be positive.")
        self.in_channels, self.out_channels = in_channels, out_channels
        scale = np.sqrt(1.0 / in_channels)
        self.weight = Parameter(f"{name}.weight",
                                (rng.standard_normal((out_channels, in_channels)) * scale).astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels, dtype=dtype))

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x, self.in_channels)
        return self.weight.value @ x + self.bias.value[:, None], x

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        x = cache
        self.weight.grad += gy @ x.T
        self.bias.grad += gy.sum(axis=1)
        return self.weight.value.T @ gy


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x)
        return np.maximum(x, 0), x > 0

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        return gy * cache


class PReLU(Layer):
    kind = LayerKind.PRELU

    def __init__(self, name: str, channels: int, init: float = 0.25, dtype=np.float32) -> None:
        super().__init__(name)
        self.channels = channels
        self.slope = Parameter(f"{name}.slope", np.full(channels, init, dtype=dtype))

    def parameters(self) -> List[Parameter]:
        return [self.slope]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x, self.channels)
        positive = x > 0
        return np.where(positive, x, self.slope.value[:, None] * x), (x, positive)

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        x, positive = cache
        self.slope.grad += np.sum(np.where(positive, 0, gy * x), axis=1)
        return np.where(positive, gy, gy * self.slope.value[:, None])


class LayerNorm(Layer):
    """Normalises each frame across channels, then applies a per-channel gain and offset."""
    kind = LayerKind.LAYERNORM

    def __init__(self, name: str, channels: int, dtype=np.float32) -> None:
        super().__init__(name)
        self.channels = channels
        self.gain = Parameter(f"{name}.gain", np.ones(channels, dtype=dtype), regularize=False)
        self.offset = Parameter(f"{name}.offset", np.zeros(channels, dtype=dtype), regularize=False)

    def parameters(self) -> List[Parameter]:
        return [self.gain, self.offset]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x, self.channels)
        mean = x.mean(axis=0, keepdims=True)
        inv_std = 1.0 / np.sqrt(x.var(axis=0, keepdims=True) + LAYERNORM_EPS)
        x_hat = (x - mean) * inv_std
        return self.gain.value[:, None] * x_hat + self.offset.value[:, None], (x_hat, inv_std)

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        x_hat, inv_std = cache
        self.gain.grad += np.sum(gy * x_hat, axis=1)
        self.offset.grad += gy.sum(axis=1)
        g_hat = gy * self.gain.value[:, None]
        n = x_hat.shape[0]
        return inv_std / n * (n * g_hat - g_hat.sum(axis=0, keepdims=True)
                              - x_hat * np.sum(g_hat * x_hat, axis=0, keepdims=True))


class MeanPoolTime(Layer):
    kind = LayerKind.MEAN_POOL_TIME

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x)
        return x.mean(axis=1, keepdims=True), x.shape[1]

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        length = cache
        return np.repeat(gy / length, length, axis=1)


class StatsPoolTime(Layer):
    """Mean and standard deviation over time, stacked: 2C x 1."""
    kind = LayerKind.STATS_POOL_TIME

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x)
        mean = x.mean(axis=1, keepdims=True)
        centred = x - mean
        std = np.sqrt(np.mean(centred ** 2, axis=1, keepdims=True) + STATS_POOL_EPS)
        return np.concatenate([mean, std], axis=0), (centred, std)

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        centred, std = cache
        channels, length = centred.shape
        g_mean, g_std = gy[:channels], gy[channels:]
        return g_mean / length + g_std * centred / (length * std)


class L2Normalize(Layer):
    """Unit-norm columns; a zero column maps to zero with zero gradient."""
    kind = LayerKind.L2_NORMALIZE

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x)
        norm = np.linalg.norm(x, axis=0, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        y = np.where(norm > 0, x / safe, 0.0)
        return y, (y, norm, safe)

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        y, norm, safe = cache
        gx = (gy - y * np.sum(y * gy, axis=0, keepdims=True)) / safe
        return np.where(norm > 0, gx, 0.0)


class SigmoidMask(Layer):
    kind = LayerKind.SIGMOID_MASK

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        self._expect(x)
        y = expit(x)
        return y, y

    def backward(self, cache: Any, gy: np.ndarray) -> np.ndarray:
        y = cache
        return gy * y * (1.0 - y)


class LayerSpec:
    """Declarative description of one layer; `build` instantiates it with fresh parameters."""

    def __init__(self, kind: LayerKind, **sizes) -> None:
        self.kind: LayerKind = kind
        self.sizes: dict = sizes
        for key, value in sizes.items():
            if isinstance(value, int) and not isinstance(value, bool) and value < 1:
                raise InvalidInputError(f"{kind}: size '{key}' must be positive, got {value}.")

    def __repr__(self) -> str:
        cls_name = type(self).__name__
        sizes = ', '.join(f"{k}={v}" for k, v in self.sizes.items())
        return f"{cls_name}({self.kind}{', ' if sizes else ''}{sizes})"

    def build(self, name: str, rng: np.random.Generator, dtype=np.float32) -> Layer:
        s = self.sizes
        if self.kind is LayerKind.CONV1D:
            return Conv1d(name, s['in_channels'], s['out_channels'], s['kernel'], rng, dilation=s.get('dilation', 1),
                          stride=s.get('stride', 1), padding=s.get('padding', PaddingMode.VALID), dtype=dtype)
        if self.kind is LayerKind.TRANSPOSED_CONV1D:
            return TransposedConv1d(name, s['in_channels'], s['out_channels'], s['kernel'], s['stride'], rng,
                                    dtype=dtype)
        if self.kind is LayerKind.POINTWISE_LINEAR:
            return PointwiseLinear(name, s['in_channels'], s['out_channels'], rng, dtype=dtype)
        if self.kind is LayerKind.PRELU:
            return PReLU(name, s['channels'], dtype=dtype)
        if self.kind is LayerKind.LAYERNORM:
            return LayerNorm(name, s['channels'], dtype=dtype)
        simple = {
            LayerKind.RELU: ReLU,
            LayerKind.MEAN_POOL_TIME: MeanPoolTime,
            LayerKind.STATS_POOL_TIME: StatsPoolTime,
            LayerKind.L2_NORMALIZE: L2Normalize,
            LayerKind.SIGMOID_MASK: SigmoidMask,
        }
        return simple[self.kind](name)
