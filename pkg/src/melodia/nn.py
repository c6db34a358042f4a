"""Minimal reverse-mode autodiff over dense numpy arrays.

Exactly the operations the recurrent autoencoder needs: affine maps, the
GRU cell, embedding lookups, softmax cross-entropy, and RMSprop.  Training
runs in float32; float64 exists for gradient verification.  A global
no-grad mode turns every operation into plain numpy arithmetic, which keeps
finite-difference sweeps cheap.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .notes import MelodiaError


class GradientError(MelodiaError):
    """Misuse of the autodiff graph (missing grads, repeated backward)."""


_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A numpy array with an optional gradient slot and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar loss into leaf ``grad``s."""
        if self.data.shape != ():
            raise GradientError("backward() needs a scalar loss")
        if self._done:
            raise GradientError("backward() already ran on this graph; reset gradients first")
        self._done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad_out = grads.pop(id(node), None)
            if grad_out is None:
                continue
            if node._backward is None:
                node.grad = grad_out if node.grad is None else node.grad + grad_out
                continue
            for parent, grad in zip(node._parents, node._backward(grad_out)):
                if grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _tracing(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _result(data, parents, backward) -> Tensor:
    if _tracing(*parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    out = a.data * factor

    def backward(g):
        return (g * factor,)

    return _result(out, (a,), backward)


def shift(a: Tensor, offset: float) -> Tensor:
    out = a.data + offset

    def backward(g):
        return (g,)

    return _result(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.T, a.data.T @ g)

    return _result(out, (a, b), backward)


def affine_pair(x: Tensor, w: Tensor, h: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + h @ u + b``, one tape node for the whole gate input."""
    out = x.data @ w.data + h.data @ u.data + b.data

    def backward(g):
        return (
            g @ w.data.T,
            x.data.T @ g,
            g @ u.data.T,
            h.data.T @ g,
            _unbroadcast(g, b.data.shape),
        )

    return _result(out, (x, w, h, u, b), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _result(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _result(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tuple(tensors), backward)


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum()

    def backward(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)

    return _result(out, (a,), backward)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        return (np.repeat(np.expand_dims(g, axis), a.data.shape[axis], axis=axis),)

    return _result(out, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def embed(table: Tensor, indices: np.ndarray | int) -> Tensor:
    """Row lookup; the gradient scatter-adds into the selected rows only."""
    idx = np.asarray(indices)
    rows, dim = table.data.shape
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise GradientError(f"embedding index out of range [0, {rows})")
    out = table.data[idx]

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx, g.reshape(idx.shape + (dim,)))
        return (grad,)

    return _result(out, (table,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis of a plain array."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray | int) -> Tensor:
    """Per-example negative log-likelihood, max-shifted for stability.

    ``logits`` is (V,) with an int target, or (B, V) with a (B,) target
    array; the result has the batch shape.
    """
    idx = np.asarray(targets)
    raw = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    flat_idx = idx.reshape(-1)
    if flat_idx.size and (flat_idx.min() < 0 or flat_idx.max() >= raw.shape[1]):
        raise GradientError(f"target index out of range [0, {raw.shape[1]})")
    shifted = raw - raw.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    batch = np.arange(raw.shape[0])
    losses = lse - shifted[batch, flat_idx]
    out = losses if logits.data.ndim == 2 else losses[0]

    def backward(g):
        probs = np.exp(shifted - lse[:, None])
        probs[batch, flat_idx] -= 1.0
        grad = probs * np.asarray(g).reshape(-1, 1)
        return (grad if logits.data.ndim == 2 else grad[0],)

    return _result(out, (logits,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight shaped (in, out)."""
    return add(matmul(x, weight), bias)


class ParamSet:
    """Named learnable tensors plus their RMSprop accumulators."""

    def __init__(self, dtype: np.dtype = np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.accumulators: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise GradientError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = tensor
        self.accumulators[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def fill_missing_grads(self) -> None:
        """Zero the gradient of parameters the last graph never touched.

        Lets optimizer steps run over models whose run mode skips whole
        modules (the decoder-only baseline never executes the encoder);
        RMSprop leaves zero-gradient parameters unchanged.
        """
        for tensor in self._params.values():
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class GruCell:
    """Gated recurrent unit with the reset-before-candidate formulation.

    ``h = (1 - u) * h_prev + u * c`` with sigmoid gates u (update) and
    r (reset), and candidate ``c = tanh(W_c x + U_c (r * h_prev) + b_c)``.
    Weights are registered in the owning :class:`ParamSet` under
    ``<name>.{W,U,b}_{u,r,c}``; matrices are (input, hidden) and
    (hidden, hidden), initialized uniformly within 1/sqrt(fan_in).
    """

    def __init__(
        self,
        name: str,
        input_size: int,
        hidden_size: int,
        params: ParamSet,
        rng: np.random.Generator,
    ):
        self.name = name
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.weights = {}
        for gate in ("u", "r", "c"):
            self.weights[f"W_{gate}"] = params.add(
                f"{name}.W_{gate}", uniform_init(rng, (input_size, hidden_size), input_size)
            )
            self.weights[f"U_{gate}"] = params.add(
                f"{name}.U_{gate}", uniform_init(rng, (hidden_size, hidden_size), hidden_size)
            )
            self.weights[f"b_{gate}"] = params.add(f"{name}.b_{gate}", np.zeros(hidden_size))

    def step(self, h_prev: Tensor, x: Tensor) -> Tensor:
        w = self.weights
        if x.data.shape[-1] != self.input_size or h_prev.data.shape[-1] != self.hidden_size:
            raise GradientError(
                f"{self.name}: expected input {self.input_size} / hidden {self.hidden_size},"
                f" got {x.data.shape} / {h_prev.data.shape}"
            )
        u = sigmoid(affine_pair(x, w["W_u"], h_prev, w["U_u"], w["b_u"]))
        r = sigmoid(affine_pair(x, w["W_r"], h_prev, w["U_r"], w["b_r"]))
        c = tanh(affine_pair(x, w["W_c"], mul(r, h_prev), w["U_c"], w["b_c"]))
        return add(mul(shift(scale(u, -1.0), 1.0), h_prev), mul(u, c))


def rmsprop_update(
    params: ParamSet,
    lr: float = 1e-4,
    decay: float = 0.9,
    eps: float = 1e-8,
) -> None:
    """One in-place RMSprop step over every parameter.

    ``acc <- decay * acc + (1 - decay) * g**2`` then
    ``p <- p - lr * g / sqrt(acc + eps)``.
    """
    for name, tensor in params.items():
        if tensor.grad is None:
            raise GradientError(f"parameter {name!r} has no gradient; run backward first")
        grad = tensor.grad.astype(tensor.data.dtype, copy=False)
        acc = params.accumulators[name]
        acc *= decay
        acc += (1.0 - decay) * grad * grad
        tensor.data -= lr * grad / np.sqrt(acc + eps)


_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.int32): 2,
    np.dtype(np.int64): 3,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def write_tensor_table(arrays: dict[str, np.ndarray]) -> bytes:
    """Little-endian name/dtype/shape/payload table shared by all containers."""
    out = bytearray(struct.pack("<I", len(arrays)))
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<BB", _DTYPE_CODES[array.dtype], array.ndim)
        out += struct.pack(f"<{array.ndim}I", *array.shape)
        out += np.ascontiguousarray(array).astype(array.dtype.newbyteorder("<")).tobytes()
    return bytes(out)


def read_tensor_table(data: bytes, pos: int) -> tuple[dict[str, np.ndarray], int]:
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        array = np.frombuffer(data[pos : pos + nbytes], dtype=dtype.newbyteorder("<"))
        pos += nbytes
        arrays[name] = array.astype(dtype).reshape(shape)
    return arrays, pos
