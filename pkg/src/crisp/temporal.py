"""Per-asset temporal encoder: BiLSTM, time attention, dual pooling.

Each asset's T-day feature sequence runs through a bidirectional LSTM (128
units per direction), 4-head scaled dot-product self-attention over the
time axis (64 dims per head, concatenated and projected back to 256), and
a pooling stage concatenating the time mean with the final step (512 dims)
projected to a 128-dim embedding.  A separate shared 256->128 projection
exposes per-step embeddings for the downstream per-step graph route.

Assets are independent here: the batch and asset axes are flattened
together, so permuting assets permutes outputs identically.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ParameterBag, Tensor, concat, matmul, softmax, uniform_init
from .nn import LSTM, Linear

__all__ = ["TemporalEncoder"]

_HEADS = 4
_HEAD_DIM = 64
_HIDDEN = 128      # per LSTM direction
_MODEL = 2 * _HIDDEN


class TemporalEncoder:

    def __init__(self, bag: ParameterBag, n_features: int, rng: np.random.Generator,
                 n_heads: int = _HEADS):
        if _MODEL % n_heads != 0:
            raise ValueError(f"{n_heads} heads do not divide model width {_MODEL}")
        self.n_heads = n_heads
        self.head_dim = _MODEL // n_heads
        self.fwd = LSTM(bag, "temporal.lstm_fwd", n_features, _HIDDEN, rng)
        self.bwd = LSTM(bag, "temporal.lstm_bwd", n_features, _HIDDEN, rng)
        self.wq = bag.register("temporal.attn_q", uniform_init(rng, _MODEL, (_MODEL, _MODEL)))
        self.wk = bag.register("temporal.attn_k", uniform_init(rng, _MODEL, (_MODEL, _MODEL)))
        self.wv = bag.register("temporal.attn_v", uniform_init(rng, _MODEL, (_MODEL, _MODEL)))
        self.w_out = bag.register("temporal.attn_out", uniform_init(rng, _MODEL, (_MODEL, _MODEL)))
        self.pool_proj = Linear(bag, "temporal.pool_proj", 2 * _MODEL, 128, rng, bias=False)
        self.step_proj = Linear(bag, "temporal.step_proj", _MODEL, 128, rng, bias=False)

    def bilstm(self, x: Tensor) -> Tensor:
        """(B*N, T, F) -> (B*N, T, 256): forward and backward states concatenated."""
        return concat([self.fwd.run(x), self.bwd.run(x, reverse=True)], axis=2)

    def _split_heads(self, x: Tensor, rows: int, steps: int) -> Tensor:
        # (rows, T, model) -> (rows, heads, T, head_dim)
        return x.reshape(rows, steps, self.n_heads, self.head_dim).transpose((0, 2, 1, 3))

    def self_attention(self, h: Tensor, return_weights: bool = False):
        """(B*N, T, 256) -> (B*N, T, 256) attention over time, per sequence."""
        rows, steps, _ = h.shape
        q = self._split_heads(matmul(h, self.wq.tensor), rows, steps)
        k = self._split_heads(matmul(h, self.wk.tensor), rows, steps)
        v = self._split_heads(matmul(h, self.wv.tensor), rows, steps)
        scores = matmul(q, k.swap_last_two()) * (1.0 / math.sqrt(self.head_dim))
        weights = softmax(scores, axis=-1)                    # (rows, heads, T, T)
        mixed = matmul(weights, v)
        mixed = mixed.transpose((0, 2, 1, 3)).reshape(rows, steps, _MODEL)
        out = matmul(mixed, self.w_out.tensor)
        if return_weights:
            return out, weights
        return out

    def pool(self, h_attn: Tensor) -> Tensor:
        """(B*N, T, 256) -> (B*N, 128): [time mean ; last step] projected."""
        steps = h_attn.shape[1]
        pooled = concat([h_attn.mean(axis=1), h_attn[:, steps - 1, :]], axis=1)
        return self.pool_proj(pooled)

    def __call__(self, x: Tensor, return_weights: bool = False):
        """(B, N, T, F) -> (h_temp (B, N, 128), h_step (B, N, T, 128)).

        ``h_temp`` is the pooled per-asset embedding; ``h_step`` carries the
        shared per-step projection of the attention output.
        """
        b, n, steps, feats = x.shape
        flat = x.reshape(b * n, steps, feats)
        h_bi = self.bilstm(flat)
        if return_weights:
            h_attn, weights = self.self_attention(h_bi, return_weights=True)
        else:
            h_attn = self.self_attention(h_bi)
        h_temp = self.pool(h_attn).reshape(b, n, 128)
        h_step = self.step_proj(h_attn).reshape(b, n, steps, 128)
        if return_weights:
            return h_temp, h_step, weights
        return h_temp, h_step
