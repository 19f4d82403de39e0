"""Dense float64 tensors with reverse-mode automatic differentiation.

Every learnable layer in the pipeline is built from the operations in this
module.  A ``Tensor`` wraps a numpy array plus an optional gradient buffer
and a backpropagation closure; calling :func:`backward` on a scalar loss
walks the graph in reverse topological order and accumulates gradients into
every reachable tensor that requires them.

Design notes:

* float64 everywhere.  At desk scale (13 assets, 20-day windows) precision
  is cheaper than speed and keeps finite-difference checks noise-free.
* Gradients accumulate across repeated backward calls; call
  :meth:`Tensor.zero_grad` (or ``Model.zero_grads``) between steps.
* ``clip`` passes gradient 1 inside the bounds and 0 outside.
* Dropout uses inverted scaling at train time so eval mode is the identity.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ParameterBag",
    "as_tensor",
    "backward",
    "concat",
    "dropout",
    "gather",
    "grad_enabled",
    "leaky_relu",
    "matmul",
    "maximum",
    "no_grad",
    "softmax",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (eval-mode forward)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _is_basic_key(key) -> bool:
    """True for int/slice indexing, where positions cannot repeat."""
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice, type(None), type(Ellipsis)))
               for k in items)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over axes that numpy broadcasting introduced or stretched."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array node in a reverse-mode autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op",
                 "_grad_alias")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self._grad_alias = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], op: str,
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out.op = op
        return out

    # -- bookkeeping ----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)
            self._grad_alias = False

    def _accumulate(self, grad: np.ndarray) -> None:
        # The first contribution is kept by reference; a second contribution
        # replaces it with a fresh sum so an aliased upstream buffer is never
        # mutated in place.
        if self.grad is None:
            self.grad = grad if grad.shape == self.data.shape else \
                np.broadcast_to(grad, self.data.shape).copy()
            self._grad_alias = True
        elif self._grad_alias:
            self.grad = self.grad + grad
            self._grad_alias = False
        else:
            self.grad += grad

    def _own_grad(self) -> np.ndarray:
        """Gradient buffer this tensor may mutate in place."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        elif self._grad_alias:
            self.grad = self.grad.copy()
        self._grad_alias = False
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        a, b = self, as_tensor(other)
        out_data = a.data + b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._from_op(out_data, (a, b), "add", bwd)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, as_tensor(other)
        out_data = a.data - b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))

        return Tensor._from_op(out_data, (a, b), "sub", bwd)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        a, b = self, as_tensor(other)
        out_data = a.data * b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(out_data, (a, b), "mul", bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, as_tensor(other)
        out_data = a.data / b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(out_data, (a, b), "div", bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        a = self
        out_data = -a.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._from_op(out_data, (a,), "neg", bwd)

    def __pow__(self, exponent: float):
        a = self
        p = float(exponent)
        out_data = a.data ** p

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._from_op(out_data, (a,), "pow", bwd)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * out_data)

        return Tensor._from_op(out_data, (a,), "exp", bwd)

    def log(self):
        a = self
        out_data = np.log(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._from_op(out_data, (a,), "log", bwd)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * 0.5 / out_data)

        return Tensor._from_op(out_data, (a,), "sqrt", bwd)

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._from_op(out_data, (a,), "tanh", bwd)

    def sigmoid(self):
        a = self
        out_data = 1.0 / (1.0 + np.exp(-a.data))

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (a,), "sigmoid", bwd)

    def relu(self):
        a = self
        mask = a.data > 0.0
        out_data = np.where(mask, a.data, 0.0)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * mask)

        return Tensor._from_op(out_data, (a,), "relu", bwd)

    def abs(self):
        a = self
        out_data = np.abs(a.data)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * np.sign(a.data))

        return Tensor._from_op(out_data, (a,), "abs", bwd)

    def clip(self, lo: float, hi: float):
        """Clamp to [lo, hi]; gradient is 1 inside the bounds, 0 outside."""
        a = self
        inside = (a.data >= lo) & (a.data <= hi)
        out_data = np.clip(a.data, lo, hi)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * inside)

        return Tensor._from_op(out_data, (a,), "clip", bwd)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                gx = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gx, a.shape).copy())

        return Tensor._from_op(out_data, (a,), "sum", bwd)

    def mean(self, axis: int | None = None, keepdims: bool = False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g.reshape(a.shape))

        return Tensor._from_op(out_data, (a,), "reshape", bwd)

    def transpose(self, axes: Sequence[int]):
        a = self
        axes = tuple(axes)
        out_data = np.transpose(a.data, axes)
        inv = tuple(np.argsort(axes))

        def bwd(g):
            if a.requires_grad:
                a._accumulate(np.transpose(g, inv))

        return Tensor._from_op(out_data, (a,), "transpose", bwd)

    def swap_last_two(self):
        axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        return self.transpose(axes)

    def broadcast_to(self, shape: Sequence[int]):
        a = self
        shape = tuple(shape)
        out_data = np.broadcast_to(a.data, shape).copy()

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))

        return Tensor._from_op(out_data, (a,), "broadcast", bwd)

    def __getitem__(self, key):
        a = self
        out_data = a.data[key]
        if np.isscalar(out_data) or out_data.ndim == 0:
            out_data = np.asarray(out_data, dtype=np.float64)
        basic = _is_basic_key(key)

        def bwd(g):
            if a.requires_grad:
                gx = a._own_grad()
                if basic:
                    gx[key] += g
                else:
                    np.add.at(gx, key, g)

        return Tensor._from_op(out_data, (a,), "slice", bwd)

    # -- autodiff entry point -------------------------------------------------

    def backward(self) -> None:
        backward(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy-style broadcasting of leading batch axes.

    Both operands must have at least 2 dimensions; the last two are the
    matrix axes and leading axes broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(
            f"matmul requires operands with ndim >= 2, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul: inner dimensions disagree between shapes {a.shape} and {b.shape}")

    if b.ndim == 2:
        # Weight product: collapse the batch axes into one GEMM instead of
        # looping stacked matrix products, in both directions.
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out_data = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def bwd(g):
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(a2.T @ g2)

        return Tensor._from_op(out_data, (a, b), "matmul", bwd)

    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ValueError(
            f"matmul: cannot broadcast batch dimensions of shapes {a.shape} and {b.shape}"
        ) from exc

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._from_op(out_data, (a, b), "matmul", bwd)


def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Stable softmax along `axis` with sharpening temperature.

    Logits are divided by `temperature` (must be positive) and shifted by
    their max before exponentiation, so any finite input yields rows that
    sum to one.
    """
    if temperature <= 0.0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    x = as_tensor(x)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate(out_data * (g - inner) / temperature)

    return Tensor._from_op(out_data, (x,), "softmax", bwd)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """x where x >= 0, slope * x elsewhere."""
    x = as_tensor(x)
    mask = x.data >= 0.0
    out_data = np.where(mask, x.data, slope * x.data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * np.where(mask, 1.0, slope))

    return Tensor._from_op(out_data, (x,), "leaky_relu", bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; the larger operand receives the gradient (ties go to `a`)."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return Tensor._from_op(out_data, (a, b), "maximum", bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._from_op(out_data, tuple(tensors), "concat", bwd)


def gather(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select elements of a flat tensor by integer indices (CVaR tail picks)."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ValueError(f"gather expects a 1-D tensor, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out_data = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            np.add.at(x._own_grad(), idx, g)

    return Tensor._from_op(out_data, (x,), "gather", bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) in training, identity in eval."""
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    x = as_tensor(x)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * Tensor(mask)


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through its graph.

    Gradients accumulate into every reachable tensor with
    ``requires_grad=True``; repeated calls without ``zero_grad`` add up.
    Raises if the loss is not a single-element tensor.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    # Iterative topological sort; graphs routinely exceed the recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent._backward is not None:
                stack.append((parent, False))
            elif parent.requires_grad and parent.grad is None:
                parent.grad = np.zeros_like(parent.data)

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


class Parameter:
    """A named, trainable tensor; gradient buffer allocated eagerly."""

    __slots__ = ("name", "tensor", "trainable")

    def __init__(self, name: str, value: np.ndarray, trainable: bool = True):
        self.name = name
        self.tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self.tensor.grad = np.zeros_like(self.tensor.data)
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


class ParameterBag:
    """Ordered parameter registry enforcing unique names within a model."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, name: str, value: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        p = Parameter(name, value, trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterable[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in state:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            if state[name].shape != p.data.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {state[name].shape} "
                    f"does not match model shape {p.data.shape}")
            p.tensor.data = np.array(state[name], dtype=np.float64)
            p.tensor.grad = np.zeros_like(p.tensor.data)


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform(-k, k) with k = 1/sqrt(fan_in), the usual recurrent-net default."""
    k = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-k, k, size=shape)
