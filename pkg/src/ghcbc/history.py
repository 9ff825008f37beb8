"""Vision/action history: paired FIFO buffers, their token assembly with a
learned [CLS] prefix, and the transformer encoder that compresses them into
one KL-regularized history token."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import Encoder, Linear, Module, sinusoid_table
from .tensor import Tensor


class HistoryBuffers:
    """Paired FIFO stores of past vision tokens and executed actions.

    Both buffers always have equal length; pushing drops the oldest pair once
    capacity k is reached. Entries are ordered oldest to newest.
    """

    def __init__(self, k: int, action_dim: int):
        if k < 1:
            raise ContractError(f"history length must be >= 1, got {k}")
        self.k = k
        self.action_dim = action_dim
        self.vision: deque[np.ndarray] = deque(maxlen=k)
        self.actions: deque[np.ndarray] = deque(maxlen=k)

    def __len__(self) -> int:
        return len(self.vision)

    def push(self, vis_tokens, action) -> None:
        if vis_tokens is None or action is None:
            raise ContractError("push needs both a vision entry and an action entry")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise ContractError(
                f"action entry shape {action.shape} != ({self.action_dim},)"
            )
        vis = vis_tokens.numpy() if isinstance(vis_tokens, Tensor) else np.asarray(vis_tokens)
        self.vision.append(np.array(vis, dtype=np.float64))
        self.actions.append(action.copy())

    def clear(self) -> None:
        self.vision.clear()
        self.actions.clear()


@dataclass
class HcLatent:
    """Latent-head outputs: mean, positive scale, and the realized sample."""

    mu: Tensor
    sigma: Tensor
    sample: Tensor


def kl_loss(latent: HcLatent) -> Tensor:
    """KL(N(mu, sigma) || N(0, I)), summed over the latent axis and averaged
    over any leading batch axes."""
    mu, sigma = latent.mu, latent.sigma
    var = sigma * sigma
    per = (mu * mu + var - T.log(var) - 1.0).sum(axis=-1) * 0.5
    return T.mean(per)


class HistoryEncoder(Module):
    """Assembles buffered history into a token sequence and encodes it into
    the single history feature token plus its latent."""

    def __init__(self, history_k: int, d_model: int, action_dim: int, latent_dim: int,
                 n_layers: int, n_heads: int, ff_dim: int, rng: np.random.Generator,
                 include_vision: bool = True):
        self.history_k = history_k
        self.d_model = d_model
        self.action_dim = action_dim
        self.latent_dim = latent_dim
        self.include_vision = include_vision
        self.cls_token = Tensor(rng.normal(0.0, 0.02, size=(1, d_model)), requires_grad=True)
        self.act_proj = Linear(action_dim, d_model, rng)
        self.encoder = Encoder(n_layers, d_model, n_heads, ff_dim, rng)
        self.mu_head = Linear(d_model, latent_dim, rng)
        self.logvar_head = Linear(d_model, latent_dim, rng)
        self.out_proj = Linear(latent_dim, d_model, rng)
        self._pos = sinusoid_table(history_k, d_model)

    # -- token assembly ----------------------------------------------------

    def history_arrays(self, buffers: HistoryBuffers) -> tuple[np.ndarray, np.ndarray]:
        """Mean-compressed vision rows and raw action rows, zero-padded at the
        oldest positions up to length k."""
        k = self.history_k
        vis = np.zeros((k, self.d_model))
        act = np.zeros((k, self.action_dim))
        n = len(buffers)
        for i, (v, a) in enumerate(zip(buffers.vision, buffers.actions)):
            vis[k - n + i] = v.mean(axis=0)
            act[k - n + i] = a
        return vis, act

    def assemble_arrays(self, vis_rows: np.ndarray, act_rows: np.ndarray) -> Tensor:
        """(..., k, d_model) and (..., k, action_dim) -> (..., S, d_model)
        with S = 2k+1 (or k+1 without the vision stream)."""
        if vis_rows.shape[-2:] != (self.history_k, self.d_model):
            raise DimensionError(
                f"vision history rows {vis_rows.shape} != (..., {self.history_k}, {self.d_model})"
            )
        if act_rows.shape[-2:] != (self.history_k, self.action_dim):
            raise DimensionError(
                f"action history rows {act_rows.shape} != (..., {self.history_k}, {self.action_dim})"
            )
        lead = vis_rows.shape[:-2]
        pos = Tensor(self._pos)
        streams = [self._cls(lead)]
        if self.include_vision:
            streams.append(Tensor(vis_rows) + pos)
        streams.append(self.act_proj(Tensor(act_rows)) + pos)
        return T.concat(streams, axis=-2)

    def assemble(self, buffers: HistoryBuffers) -> Tensor:
        vis, act = self.history_arrays(buffers)
        return self.assemble_arrays(vis, act)

    def _cls(self, lead: tuple) -> Tensor:
        if not lead:
            return self.cls_token
        return T.broadcast_to(self.cls_token, (*lead, 1, self.d_model))

    # -- encoding ----------------------------------------------------------

    def encode(self, tokens: Tensor, noise: np.ndarray | None = None
               ) -> tuple[Tensor, HcLatent]:
        """Run the history encoder; sample the latent when noise is given
        (training), use the mean otherwise (evaluation)."""
        y = self.encoder(tokens)
        cls_row = y[0:1] if y.ndim == 2 else y[:, 0:1]  # (..., 1, d)
        lead = tokens.shape[:-2]
        mu = self.mu_head(cls_row).reshape(*lead, self.latent_dim)
        logvar = self.logvar_head(cls_row).reshape(*lead, self.latent_dim)
        sigma = T.exp(logvar * 0.5)
        if noise is not None:
            noise = np.asarray(noise, dtype=np.float64)
            if noise.shape != mu.shape:
                raise DimensionError(f"noise shape {noise.shape} != latent shape {mu.shape}")
            sample = mu + sigma * Tensor(noise)
        else:
            sample = mu
        hc = self.out_proj(sample.reshape(*lead, 1, self.latent_dim))
        return hc, HcLatent(mu=mu, sigma=sigma, sample=sample)

    def __call__(self, buffers: HistoryBuffers, noise: np.ndarray | None = None):
        return self.encode(self.assemble(buffers), noise)
