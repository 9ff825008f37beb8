"""Learned-layer building blocks: linear, layer norm, attention, transformer
encoder/decoder stacks, and strided convolution. All blocks use pre-norm
residuals."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


class Module:
    """Minimal parameter container; children discovered via attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{name}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise DimensionError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise DimensionError(
                    f"parameter '{name}' shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()


def xavier(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(xavier(rng, n_in, n_out), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.eps) * self.gain + self.shift


class MultiheadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise DimensionError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)
        self.scale = 1.0 / np.sqrt(self.head_dim)

    def _split(self, x: Tensor) -> Tensor:
        # (..., S, d) -> (..., h, S, hd)
        *lead, s, d = x.shape
        x = x.reshape(*lead, s, self.n_heads, self.head_dim)
        return x.swapaxes(-3, -2)

    def _merge(self, x: Tensor) -> Tensor:
        x = x.swapaxes(-3, -2)
        *lead, s, h, hd = x.shape
        return x.reshape(*lead, s, h * hd)

    def __call__(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(kv_in))
        v = self._split(self.wv(kv_in))
        att = T.softmax((q @ k.swapaxes(-2, -1)) * self.scale, axis=-1)
        return self.wo(self._merge(att @ v))


class FeedForward(Module):
    def __init__(self, d_model: int, d_hidden: int, rng: np.random.Generator):
        self.lin1 = Linear(d_model, d_hidden, rng)
        self.lin2 = Linear(d_hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).relu())


class EncoderLayer(Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiheadAttention(d_model, n_heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ff(self.norm2(x))


class Encoder(Module):
    def __init__(self, n_layers: int, d_model: int, n_heads: int, d_ff: int,
                 rng: np.random.Generator):
        self.layers = [EncoderLayer(d_model, n_heads, d_ff, rng) for _ in range(n_layers)]
        self.final_norm = LayerNorm(d_model)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.final_norm(x)


class DecoderLayer(Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d_model)
        self.self_attn = MultiheadAttention(d_model, n_heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.cross_attn = MultiheadAttention(d_model, n_heads, rng)
        self.norm3 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, rng)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h)
        x = x + self.cross_attn(self.norm2(x), memory)
        return x + self.ff(self.norm3(x))


class Decoder(Module):
    def __init__(self, n_layers: int, d_model: int, n_heads: int, d_ff: int,
                 rng: np.random.Generator):
        self.layers = [DecoderLayer(d_model, n_heads, d_ff, rng) for _ in range(n_layers)]
        self.final_norm = LayerNorm(d_model)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x, memory)
        return self.final_norm(x)


class Conv2d(Module):
    """Strided 2-d convolution realized as im2col followed by matmul."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, padding: int, rng: np.random.Generator):
        k = in_channels * kernel * kernel
        self.weight = Tensor(xavier(rng, k, out_channels), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.out_channels = out_channels

    def __call__(self, x: Tensor) -> Tensor:
        *lead, _, h, w = x.shape
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        cols = T.im2col(x, self.kernel, self.kernel, self.stride, self.padding)
        y = cols @ self.weight + self.bias  # (..., OH*OW, OC)
        y = y.swapaxes(-2, -1)
        return y.reshape(*lead, self.out_channels, oh, ow)


def sinusoid_table(n_positions: int, dim: int) -> np.ndarray:
    """Fixed sine/cosine position table of shape (n_positions, dim)."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table
