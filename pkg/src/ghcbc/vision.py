"""Wrist-camera encoder: strided conv backbone, channel projection to the
token width, additive 2-d sinusoidal position encoding, and flattening of the
spatial grid into vision tokens."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .config import VisionConfig
from .errors import ConfigError, DimensionError
from .nn import Conv2d, Linear, Module
from .tensor import Tensor


@lru_cache(maxsize=8)
def positional_encoding_2d(h: int, w: int, d_model: int) -> np.ndarray:
    """Separable row/column sinusoids, rows in the first d_model/2 channels,
    columns in the rest. Deterministic, injective, values in [-1, 1].

    Returns shape (h*w, d_model).
    """
    if d_model % 4:
        raise ConfigError(f"2-d position encoding needs d_model divisible by 4, got {d_model}")
    half = d_model // 2
    rows = _sincos(np.arange(h), half)  # (h, half)
    cols = _sincos(np.arange(w), half)  # (w, half)
    out = np.zeros((h, w, d_model))
    out[:, :, :half] = rows[:, None, :]
    out[:, :, half:] = cols[None, :, :]
    return out.reshape(h * w, d_model)


def _sincos(pos: np.ndarray, dim: int) -> np.ndarray:
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos[:, None] / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    enc = np.zeros((len(pos), dim))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


class VisionEncoder(Module):
    """Image (C, H, W) -> vision tokens (token_count, d_model).

    Also accepts a stacked batch (B, C, H, W), yielding (B, tokens, d_model).
    """

    def __init__(self, cfg: VisionConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        chans = (cfg.in_channels,) + tuple(cfg.backbone_channels)
        self.convs = [
            Conv2d(chans[i], chans[i + 1], cfg.kernel, cfg.stride, cfg.padding, rng)
            for i in range(len(cfg.backbone_channels))
        ]
        self.proj = Linear(cfg.feat_c, cfg.d_model, rng)
        self._pos = positional_encoding_2d(cfg.feat_h, cfg.feat_w, cfg.d_model)

    def backbone(self, img: Tensor) -> Tensor:
        x = img
        for conv in self.convs:
            x = conv(x).relu()
        return x

    def encode(self, img: Tensor, intermediates: list | None = None) -> Tensor:
        cfg = self.cfg
        if img.shape[-3:] != (cfg.in_channels, cfg.image_h, cfg.image_w):
            raise DimensionError(
                f"image shape {img.shape} != expected "
                f"(..., {cfg.in_channels}, {cfg.image_h}, {cfg.image_w})"
            )
        lead = img.shape[:-3]
        tc = cfg.token_count
        fmap = self.backbone(img)  # (..., feat_c, fh, fw)
        if fmap.shape[-3:] != (cfg.feat_c, cfg.feat_h, cfg.feat_w):
            raise DimensionError(
                f"backbone produced {fmap.shape[-3:]}, config expects "
                f"({cfg.feat_c}, {cfg.feat_h}, {cfg.feat_w})"
            )
        _record(intermediates, fmap)
        # channel projection with the spatial grid intact
        x = fmap.reshape(*lead, cfg.feat_c, tc).swapaxes(-2, -1)  # (..., tc, feat_c)
        x = self.proj(x)  # (..., tc, d_model)
        grid = x.swapaxes(-2, -1).reshape(*lead, cfg.d_model, cfg.feat_h, cfg.feat_w)
        _record(intermediates, grid)
        grid = grid + Tensor(self._pos.T.reshape(cfg.d_model, cfg.feat_h, cfg.feat_w))
        flat = grid.reshape(*lead, cfg.d_model, tc)
        _record(intermediates, flat)
        tokens = flat.swapaxes(-2, -1)
        _record(intermediates, tokens)
        return tokens

    def __call__(self, img: Tensor) -> Tensor:
        return self.encode(img)


def _record(intermediates, t: Tensor):
    if intermediates is not None:
        intermediates.append(t.shape)
