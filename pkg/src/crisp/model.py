"""Full allocation model: temporal + spatial encoders, graph attention, head.

The default route builds a per-step fused embedding sequence: the temporal
encoder's per-step projections are concatenated with the window-static
spatial embedding, the graph attention refines every step, and the
allocation LSTM consumes the refined sequence.  A pooled route (sequence
length 1) and the ablation variants (single-head graph attention,
mean-pool aggregation, static correlation graph, reduced feature set) are
config switches so the trainer and backtester treat all of them uniformly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .allocation import AllocationHead
from .autodiff import ParameterBag, Tensor, matmul, no_grad, uniform_init
from .graphattn import GatLayer, fuse, residual_combine
from .spatial import SpatialEncoder
from .temporal import TemporalEncoder

__all__ = ["CrispModel", "ModelConfig"]


@dataclass
class ModelConfig:
    n_assets: int = 13
    n_features: int = 31
    window: int = 20
    horizon: int = 5
    gat_heads: int = 4
    use_alloc_lstm: bool = True
    per_step_graph: bool = True
    static_graph: bool = False
    init_seed: int = 0

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class CrispModel:
    """Parameter container plus the batched differentiable forward pass."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.bag = ParameterBag()
        rng = np.random.default_rng(config.init_seed)
        self.temporal = TemporalEncoder(self.bag, config.n_features, rng)
        self.spatial = SpatialEncoder(self.bag, config.n_features, rng)
        if config.static_graph:
            # fixed-topology replacement: one graph convolution whose weight
            # matrix (256*128) matches the attention module's parameter count
            self.w_static = self.bag.register(
                "static.w", uniform_init(rng, 256, (256, 128)))
            self.gat = None
        else:
            self.gat = GatLayer(self.bag, rng, n_heads=config.gat_heads)
            self.w_static = None
        self.head = AllocationHead(self.bag, rng, use_lstm=config.use_alloc_lstm)

    # -- parameter plumbing ---------------------------------------------------

    def parameters(self):
        return list(self.bag)

    def zero_grads(self) -> None:
        self.bag.zero_grads()

    def state(self) -> dict[str, np.ndarray]:
        return self.bag.state()

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.bag.load_state(state)

    # -- forward --------------------------------------------------------------

    def forward(self, features: np.ndarray, prior_adjacency: np.ndarray,
                rng: np.random.Generator, training: bool,
                static_adjacency: np.ndarray | None = None,
                ) -> tuple[Tensor, np.ndarray | None]:
        """(B, N, T, F) features -> (weights (B, N), last-step attention).

        ``prior_adjacency`` is the normalized prior graph (N, N).  The static
        variant additionally needs per-window normalized correlation
        adjacencies (B, N, N).  Attention comes back as (B, heads, N, N)
        numpy for the final time step, or None for the static variant.
        """
        cfg = self.config
        b, n, steps, feats = features.shape
        if feats != cfg.n_features:
            raise ValueError(f"model built for {cfg.n_features} features, got {feats}")
        x = Tensor(features)
        prior = Tensor(prior_adjacency)

        h_temp, h_step = self.temporal(x)
        h_spat = self.spatial(Tensor(features.mean(axis=2)), prior)       # (B, N, 128)

        if cfg.per_step_graph:
            temp_seq = h_step.transpose((0, 2, 1, 3))                     # (B, T, N, 128)
            spat_seq = h_spat.reshape(b, 1, n, 128).broadcast_to((b, steps, n, 128))
            z_init = fuse(temp_seq, spat_seq)                             # (B, T, N, 256)
        else:
            z_init = fuse(h_temp, h_spat).reshape(b, 1, n, 256)

        if cfg.static_graph:
            if static_adjacency is None:
                raise ValueError("static-graph variant requires per-window adjacencies")
            adj = Tensor(np.asarray(static_adjacency, dtype=np.float64)
                         .reshape(b, 1, n, n))
            refined = matmul(adj, matmul(z_init, self.w_static.tensor)).relu()
            alphas_out = None
        else:
            refined, alphas = self.gat(z_init)
            last = z_init.shape[1] - 1
            alphas_out = np.stack([a.data[:, last] for a in alphas], axis=1)

        z_final = residual_combine(z_init, refined)
        weights = self.head(z_final, rng, training)
        return weights, alphas_out

    def allocate(self, features: np.ndarray, prior_adjacency: np.ndarray,
                 static_adjacency: np.ndarray | None = None,
                 ) -> tuple[np.ndarray, np.ndarray | None]:
        """Eval-mode single-window forward: (N, T, F) -> ((N,), attention)."""
        rng = np.random.default_rng(0)     # dropout disabled in eval; unused
        with no_grad():
            batch = features[None, ...]
            static = None if static_adjacency is None else static_adjacency[None, ...]
            weights, alphas = self.forward(batch, prior_adjacency, rng,
                                           training=False, static_adjacency=static)
        att = None if alphas is None else alphas[0]
        return weights.data[0].copy(), att
