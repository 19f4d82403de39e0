"""Small neural building blocks on top of the tensor engine.

Layers here hold no state beyond their parameters, which live in a shared
``ParameterBag`` owned by the model, so checkpointing and optimizer loops
see one flat namespace.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Parameter,
    ParameterBag,
    Tensor,
    concat,
    matmul,
    uniform_init,
)

__all__ = ["Linear", "LSTM", "MLP"]


class Linear:
    """Affine map y = x W + b over the last axis."""

    def __init__(self, bag: ParameterBag, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = bag.register(f"{name}.w", uniform_init(rng, in_dim, (in_dim, out_dim)))
        self.b = bag.register(f"{name}.b", uniform_init(rng, in_dim, (out_dim,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w.tensor)
        if self.b is not None:
            y = y + self.b.tensor
        return y


class LSTM:
    """Single-layer LSTM with packed gates.

    Gate pre-activations for a step are computed as one (in -> 4H) and one
    (H -> 4H) matmul; the 4H axis splits into input, forget, cell and output
    gates in that order.  ``run`` consumes a (B, T, in) batch and returns all
    hidden states (B, T, H).
    """

    def __init__(self, bag: ParameterBag, name: str, in_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        h = hidden_dim
        self.wx = bag.register(f"{name}.wx", uniform_init(rng, in_dim, (in_dim, 4 * h)))
        self.wh = bag.register(f"{name}.wh", uniform_init(rng, h, (h, 4 * h)))
        self.b = bag.register(f"{name}.b", uniform_init(rng, h, (4 * h,)))

    def step(self, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        """One timestep: x (B, in), h_prev/c_prev (B, H) -> (h, c)."""
        z = matmul(x, self.wx.tensor) + self.b.tensor
        return self._advance(z, h_prev, c_prev)

    def _advance(self, z: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        """Finish a step from the input-side pre-activation z (B, 4H)."""
        hd = self.hidden_dim
        z = z + matmul(h_prev, self.wh.tensor)
        i = z[:, 0 * hd:1 * hd].sigmoid()
        f = z[:, 1 * hd:2 * hd].sigmoid()
        g = z[:, 2 * hd:3 * hd].tanh()
        o = z[:, 3 * hd:4 * hd].sigmoid()
        c = f * c_prev + i * g
        h = o * c.tanh()
        return h, c

    def run(self, x: Tensor, reverse: bool = False) -> Tensor:
        """Full sequence: x (B, T, in) -> hidden states (B, T, H).

        With ``reverse=True`` the sequence is consumed right to left and the
        output is re-aligned so row t still describes timestep t.  The
        input-side gate projection for all steps is one matmul; only the
        recurrent projection runs inside the loop.
        """
        batch, steps, _ = x.shape
        xz = matmul(x, self.wx.tensor) + self.b.tensor      # (B, T, 4H)
        h = Tensor(np.zeros((batch, self.hidden_dim)))
        c = Tensor(np.zeros((batch, self.hidden_dim)))
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        outputs: list[Tensor | None] = [None] * steps
        for t in order:
            h, c = self._advance(xz[:, t, :], h, c)
            outputs[t] = h.reshape(batch, 1, self.hidden_dim)
        return concat(outputs, axis=1)


class MLP:
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, bag: ParameterBag, name: str, dims: list[int],
                 rng: np.random.Generator):
        if len(dims) < 2:
            raise ValueError("MLP needs at least an input and an output dimension")
        self.layers = [
            Linear(bag, f"{name}.l{i}", dims[i], dims[i + 1], rng)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x
