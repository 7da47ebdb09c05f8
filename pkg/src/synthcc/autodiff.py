"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each primitive records a backward closure on the node it creates; backprop
walks the resulting DAG in reverse topological order and accumulates exact
analytic gradients. Training runs in float32; gradient checking should build
float64 parameters (ops preserve the dtype of their inputs).
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator

import numpy as np


class Tensor:
    """A node of the recorded computation: payload, parents, backward rule."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite output from {op}")
    return x


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _finite(a.data @ b.data, "matmul")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, (a, b), backward)


def add(a, b) -> Tensor:
    """Elementwise addition with numpy broadcasting (covers bias terms)."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return Tensor(out, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = a.data * c

    def backward(g):
        return (g * c,)

    return Tensor(out, (a,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = x.data
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    out = out.astype(z.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, (x,), backward)


def softmax(x) -> Tensor:
    """Row-stabilized softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, (x,), backward)


def embedding(table, ids) -> Tensor:
    """Row lookup into `table` (V, d) by an integer array of ids."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor(out, (table,), backward)


def masked_cross_entropy(logits, targets, mask) -> Tensor:
    """Per-row negative log-likelihood of `targets`, zeroed where mask is 0.

    logits: (B, V); targets: int (B,); mask: (B,) in {0, 1}. Masked rows
    contribute exactly zero to both the value and the gradient.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=logits.dtype)
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[:, 0]
    rows = np.arange(z.shape[0])
    nll = (logsumexp - z[rows, targets]) * mask

    def backward(g):
        probs = np.exp(z - zmax)
        probs /= probs.sum(axis=-1, keepdims=True)
        probs[rows, targets] -= 1.0
        return (probs * (g * mask)[:, None],)

    return Tensor(nll, (logits,), backward)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean over rows of summed binary cross-entropy against {0,1} targets."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=logits.dtype)
    z = logits.data
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    out = (softplus - z * y).sum() / z.shape[0]

    def backward(g):
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        return ((sig - y) * (g / z.shape[0]),)

    return Tensor(out, (logits,), backward)


def concat(a, b, axis: int = -1) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.concatenate([a.data, b.data], axis=axis)
    split = a.data.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return Tensor(out, (a, b), backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum()

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False),)

    return Tensor(out, (x,), backward)


def mean_all(x) -> Tensor:
    return scale(sum_all(x), 1.0 / as_tensor(x).data.size)


# ---------------------------------------------------------------------------
# backprop engine


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 2
            order.append(node)
            continue
        mark = state.get(id(node))
        if mark == 2:
            continue
        if mark == 1:
            raise ValueError("cycle in recorded computation")
        state[id(node)] = 1
        stack.append((node, True))
        for p in node._parents:
            if state.get(id(p)) != 2:
                stack.append((p, False))
    return order


def backprop(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable node's .grad."""
    if loss.data.size != 1:
        raise ValueError("backprop expects a scalar loss")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


# ---------------------------------------------------------------------------
# parameter store


class ParamStore:
    """Named parameter tensors with stable (insertion) iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients aligned with the store; zeros for parameters the loss never reached."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, t in self._params.items():
            clone.add(name, t.data.copy())
        return clone

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            t.data = arrays[name].copy()

    def astype(self, dtype) -> "ParamStore":
        clone = ParamStore()
        for name, t in self._params.items():
            clone.add(name, t.data.astype(dtype))
        return clone


def glorot_init(
    store: ParamStore, name: str, shape: tuple, rng: np.random.Generator, dtype=np.float32
) -> Tensor:
    """Uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out)); zeros for 1-d biases."""
    if len(shape) == 1:
        return store.add(name, np.zeros(shape, dtype=dtype))
    a = np.sqrt(6.0 / (shape[0] + shape[1]))
    return store.add(name, rng.uniform(-a, a, size=shape).astype(dtype))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-3,
    max_coords_per_param: int = 64,
    rng: np.random.Generator | None = None,
    floor: float = 1e-2,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Samples up to max_coords_per_param coordinates per tensor. Per-coordinate
    error is |analytic - numeric| / max(|analytic| + |numeric|, floor); the
    floor compares near-zero gradients on an absolute scale so finite-difference
    truncation noise does not register as relative error.
    """
    rng = rng or np.random.default_rng(0)
    params.zero_grad()
    loss = loss_fn()
    backprop(loss)
    analytic = params.grads()
    worst = 0.0
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        n = flat.size
        coords = range(n) if n <= max_coords_per_param else sorted(
            rng.choice(n, size=max_coords_per_param, replace=False).tolist()
        )
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(float(a_flat[i]) - numeric) / max(abs(float(a_flat[i])) + abs(numeric), floor)
            worst = max(worst, err)
    return worst
