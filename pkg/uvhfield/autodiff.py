# --------------------------------------------------------------------
# autodiff.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Wednesday March 5, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Reverse-mode automatic differentiation over numpy arrays.

Only the operations the radiance field, the skinning model and the
renderer need are implemented.  A `Tape` records every operation whose
inputs require gradients while it is active on the current thread;
`Tape.backward()` then walks the records in reverse order.  Because
records are appended in evaluation order, reverse order is already a
valid topological order and no graph sort is needed.

Outside of an active tape operations are evaluated eagerly and their
results are detached constants, which is what inference wants.
"""

import threading
from contextlib import contextmanager
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from uvhfield.errors import InternalError

# --------------------------------------------------------------------
_state = threading.local()
_default_dtype = np.float32


# --------------------------------------------------------------------
def default_dtype():
    return getattr(_state, "dtype", _default_dtype)


# --------------------------------------------------------------------
@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the float type used for new constants."""
    previous = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


# --------------------------------------------------------------------
def _float_array(x: Any) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(default_dtype())
    return arr


# --------------------------------------------------------------------
class Node:
    __slots__ = ("tape", "output", "inputs", "backward", "op")

    def __init__(self, tape, output, inputs, backward, op):
        self.tape = tape
        self.output = output
        self.inputs = inputs
        self.backward = backward
        self.op = op


# --------------------------------------------------------------------
class Tensor:
    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad=False, name: Optional[str] = None):
        self.data = _float_array(data)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype}>"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def __len__(self):
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def __neg__(self):
        return neg(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


# --------------------------------------------------------------------
TensorLike = Tensor | np.ndarray | float | int


# --------------------------------------------------------------------
def as_tensor(x: TensorLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind != "f" or arr.ndim == 0:
        arr = arr.astype(default_dtype())
    return Tensor(arr)


# --------------------------------------------------------------------
class Tape:
    """
    Records differentiable operations evaluated on the current thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.closed = False

    @staticmethod
    def current() -> Optional["Tape"]:
        stack = getattr(_state, "tapes", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "tapes"):
            _state.tapes = []
        _state.tapes.append(self)
        return self

    def __exit__(self, *_):
        _state.tapes.pop()

    def __len__(self):
        return len(self.nodes)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward, op: str):
        for t in inputs:
            if t._node is not None and t._node.tape is not self:
                raise InternalError(
                    f'Operation "{op}" consumed a tensor recorded on another tape.'
                )
        node = Node(self, output, tuple(inputs), backward, op)
        output._node = node
        self.nodes.append(node)

    def backward(self, root: Tensor, seed: Optional[TensorLike] = None):
        """
        Propagate `seed` (ones by default) from `root` back through every
        recorded operation.  Gradients of leaf tensors are accumulated
        into their `grad` buffers.
        """
        if self.closed:
            raise InternalError("Tape has already been consumed by backward().")
        if root._node is None or root._node.tape is not self:
            raise InternalError("The backward root was not recorded on this tape.")

        seed_arr = (
            np.ones_like(root.data)
            if seed is None
            else np.broadcast_to(np.asarray(seed, dtype=root.dtype), root.shape)
        )
        grads: dict[int, np.ndarray] = {id(root): np.array(seed_arr)}

        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            input_grads = node.backward(g)
            for inp, ig in zip(node.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                ig = unbroadcast(ig, inp.shape)
                if inp._node is None:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += ig.astype(inp.dtype, copy=False)
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + ig
                else:
                    grads[id(inp)] = ig
        self.closed = True


# --------------------------------------------------------------------
def backward(tape: Tape, root: Tensor, seed: Optional[TensorLike] = None):
    tape.backward(root, seed)


# --------------------------------------------------------------------
def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------
def _make(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: Callable[[np.ndarray], Iterable[Optional[np.ndarray]]],
    op: str,
) -> Tensor:
    out = Tensor(data)
    if not any(t.requires_grad for t in inputs):
        return out
    tape = Tape.current()
    if tape is None:
        return out
    out.requires_grad = True
    tape.record(out, inputs, backward, op)
    return out


# --------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------
def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul"
    )


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div"
    )


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: TensorLike, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(
        a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow"
    )


# --------------------------------------------------------------------
# Unary functions
# --------------------------------------------------------------------
def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sin(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0, a.data).astype(a.dtype, copy=False)
    return _make(
        out,
        (a,),
        lambda g: (g * 0.5 * (1 + np.tanh(0.5 * a.data)),),
        "softplus",
    )


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def absolute(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clip(a: TensorLike, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# --------------------------------------------------------------------
# Linear algebra and reductions
# --------------------------------------------------------------------
def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def tsum(a: TensorLike, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: TensorLike, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[x] for x in axes]))
    return tsum(a, axis, keepdims) * (1.0 / max(count, 1))


def dot(a: TensorLike, b: TensorLike, keepdims=False) -> Tensor:
    """Inner product over the last axis."""
    return tsum(mul(a, b), axis=-1, keepdims=keepdims)


def norm(a: TensorLike, axis=-1, keepdims=False, eps=0.0) -> Tensor:
    return sqrt(tsum(mul(a, a), axis=axis, keepdims=keepdims) + eps)


def normalize(a: TensorLike, eps=1e-12) -> Tensor:
    return div(a, norm(a, keepdims=True, eps=eps))


def cross(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        np.cross(a.data, b.data),
        (a, b),
        lambda g: (np.cross(b.data, g), np.cross(g, a.data)),
        "cross",
    )


def cumsum_exclusive(a: TensorLike, axis=-1) -> Tensor:
    """out[i] = sum(a[:i]) along `axis`."""
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis) - a.data

    def backward(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev - g,)

    return _make(out, (a,), backward, "cumsum_exclusive")


# --------------------------------------------------------------------
# Shape manipulation, gather and scatter
# --------------------------------------------------------------------
def reshape(a: TensorLike, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _make(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape"
    )


def getitem(a: TensorLike, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward, "getitem")


def _scatter_rows(n_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sum `values` into rows `index` of a zero array with `n_rows` rows."""
    flat_idx = index.reshape(-1)
    trailing = values.shape[index.ndim:]
    width = int(np.prod(trailing, dtype=np.int64))
    flat_vals = values.reshape(flat_idx.size, width)
    out = np.zeros((n_rows, width), dtype=values.dtype)
    for col in range(width):
        out[:, col] = np.bincount(flat_idx, weights=flat_vals[:, col], minlength=n_rows)
    return out.reshape((n_rows,) + trailing)


def gather_rows(table: TensorLike, index: np.ndarray) -> Tensor:
    """
    `table[index]` for an integer index array over the first axis.
    The backward pass scatter-adds into the table rows, which is the
    gather/scatter half of a trilinear grid lookup.
    """
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    n_rows = table.shape[0]
    return _make(
        table.data[index],
        (table,),
        lambda g: (_scatter_rows(n_rows, index, g),),
        "gather_rows",
    )


def scatter_add(values: TensorLike, index: np.ndarray, n_rows: int) -> Tensor:
    """Sum rows of `values` into an `n_rows` array at positions `index`."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    out = _scatter_rows(n_rows, index, values.data).astype(values.dtype, copy=False)
    return _make(out, (values,), lambda g: (g[index],), "scatter_add")


def concat(tensors: Sequence[TensorLike], axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tensors, backward, "concat")


def stack(tensors: Sequence[TensorLike], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    data = np.stack([t.data for t in tensors], axis=axis)
    return _make(data, tensors, backward, "stack")


def broadcast_to(a: TensorLike, shape) -> Tensor:
    a = as_tensor(a)
    return _make(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (g,), "broadcast"
    )


def where(cond: np.ndarray, a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return _make(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (g * cond, g * ~cond),
        "where",
    )


# --------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------
class ParamStore:
    """
    Named learnable tensors with gradient buffers of identical shape.

    Names are dotted; the first component is the parameter group
    ("hash", "pose_encoder", "remap", "resnet" or "mlp", "rgb",
    "pose_correction").
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype).type
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise InternalError(f'Parameter "{name}" is already defined.')
        tensor = Tensor(np.array(data, dtype=self.dtype), requires_grad=True, name=name)
        tensor.grad = np.zeros_like(tensor.data)
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self, group: Optional[str] = None) -> list[str]:
        if group is None:
            return list(self.params)
        return [n for n in self.params if self.group_of(n) == group]

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def groups(self) -> list[str]:
        seen: dict[str, None] = {}
        for name in self.params:
            seen[self.group_of(name)] = None
        return list(seen)

    def count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grad(self):
        for tensor in self.params.values():
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            else:
                tensor.grad.fill(0)

    def grad_norms(self) -> dict[str, float]:
        sq: dict[str, float] = {}
        for name, tensor in self.params.items():
            group = self.group_of(name)
            g = tensor.grad if tensor.grad is not None else 0.0
            sq[group] = sq.get(group, 0.0) + float(np.sum(np.square(g, dtype=np.float64)))
        return {k: float(np.sqrt(v)) for k, v in sq.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict=True):
        for name, tensor in self.params.items():
            if name not in state:
                if strict:
                    raise InternalError(f'Missing parameter "{name}" in state.')
                continue
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise InternalError(
                    f'Parameter "{name}" has shape {value.shape}, expected {tensor.shape}.'
                )
            tensor.data[...] = value

    def astype(self, dtype) -> "ParamStore":
        store = ParamStore(dtype)
        for name, tensor in self.params.items():
            store.add(name, tensor.data)
        return store


# --------------------------------------------------------------------
def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-6,
    max_checks: int = 64,
    seed: int = 0,
) -> float:
    """
    Compare reverse-mode gradients of sum(f(*inputs)) against central
    differences in float64.  Returns the largest relative error over
    up to `max_checks` sampled entries per input.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        arrays = [np.array(x, dtype=np.float64) for x in inputs]
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        with Tape() as tape:
            out = tsum(f(*tensors))
        tape.backward(out)
        analytic = [
            t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
        ]

        def evaluate() -> float:
            return float(np.sum(f(*[Tensor(a) for a in arrays]).data))

        worst = 0.0
        for arr, grad in zip(arrays, analytic):
            flat = arr.reshape(-1)
            picks = np.arange(flat.size)
            if flat.size > max_checks:
                picks = rng.choice(flat.size, size=max_checks, replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + eps
                up = evaluate()
                flat[i] = orig - eps
                down = evaluate()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                a = grad.reshape(-1)[i]
                scale = max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, abs(a - numeric) / scale)
    return worst
