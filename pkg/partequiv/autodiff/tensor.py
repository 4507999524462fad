"""Dense tensors with reverse-mode differentiation.

Each op result keeps references to its parents and a backward closure that
maps the output gradient to one gradient per parent. `backward` sorts the
graph topologically (a `Tape`) and walks it in reverse.
"""
import contextlib
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from partequiv.errors import get_error_message
from partequiv.utils.error_handling import ShapeError

logger = logging.getLogger(__name__)

_state = {'dtype': np.float32, 'grad_enabled': True}


def get_default_dtype():
    return _state['dtype']


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    previous = _state['dtype']
    _state['dtype'] = dtype
    try:
        yield
    finally:
        _state['dtype'] = previous


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    previous = _state['grad_enabled']
    _state['grad_enabled'] = False
    try:
        yield
    finally:
        _state['grad_enabled'] = previous


def is_grad_enabled() -> bool:
    return _state['grad_enabled']


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: 'Tensor', b: 'Tensor'):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op=op, left=a.shape, right=b.shape), e)


class Tensor:
    """An N-dimensional array that can take part in a differentiation tape."""

    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable] = None
        self._op = ''

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence['Tensor'], backward: Callable, op: str) -> 'Tensor':
        """Wrap the result of an op, recording it when any parent needs gradients."""
        out = cls.__new__(cls)
        out.data = np.asarray(data)
        out.grad = None
        out._op = op
        needs_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs_grad
        out._parents = tuple(parents) if needs_grad else ()
        out._backward = backward if needs_grad else None
        return out

    # *** properties ***
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> 'Tensor':
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents, out._backward, out._op = (), None, 'detach'
        return out

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        grad_note = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_note})"

    def __len__(self):
        return self.shape[0]

    # *** backward pass ***
    def backward(self, grad: Optional[np.ndarray] = None):
        """
        Accumulate gradients of this scalar into every requires_grad leaf.

        Raises:
            ShapeError: If the tensor is not a scalar or has no graph
        """
        if self.data.size != 1:
            raise ShapeError(get_error_message('NON_SCALAR_LOSS', shape=self.shape))
        if not self.requires_grad:
            raise ShapeError(get_error_message('NO_GRAPH'))
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        Tape.from_root(self).run(seed)

    # *** arithmetic ***
    def __add__(self, other):
        other = as_tensor(other)
        _check_broadcast('add', self, other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data, (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)), 'add')

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        _check_broadcast('sub', self, other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data - other.data, (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(-g, b_shape)), 'sub')

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        _check_broadcast('mul', self, other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b, (self, other),
            lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)), 'mul')

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        _check_broadcast('div', self, other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a / b, (self, other),
            lambda g: (unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)), 'div')

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), 'neg')

    def __pow__(self, exponent: float):
        a = self.data
        return Tensor.from_op(
            a ** exponent, (self,),
            lambda g: (g * exponent * a ** (exponent - 1),), f'pow{exponent}')

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        a_shape, a_dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(a_shape, dtype=a_dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward, 'getitem')

    # *** reductions and movement ***
    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        a_shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a_shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, 'sum')

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a_shape = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(a_shape),), 'reshape')

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse_axes = tuple(np.argsort(axes))
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse_axes),), 'transpose')

    def flip(self, axis) -> 'Tensor':
        return Tensor.from_op(np.flip(self.data, axis), (self,), lambda g: (np.flip(g, axis),), 'flip')

    def take(self, indices, axis: int) -> 'Tensor':
        """Gather along one axis; repeated indices accumulate in backward."""
        indices = np.asarray(indices, dtype=np.intp)
        a_shape, a_dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(a_shape, dtype=a_dtype)
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, indices, np.moveaxis(g, axis, 0))
            return (full,)

        return Tensor.from_op(np.take(self.data, indices, axis=axis), (self,), backward, 'take')

    def broadcast_to(self, shape) -> 'Tensor':
        a_shape = self.shape
        return Tensor.from_op(
            np.broadcast_to(self.data, shape).copy(), (self,),
            lambda g: (unbroadcast(g, a_shape),), 'broadcast_to')


def as_tensor(value) -> Tensor:
    """Return value unchanged if it is a Tensor, otherwise wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='matmul', left=a.shape, right=b.shape))
    a_data, b_data = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(b_data, -1, -2)
        gb = np.swapaxes(a_data, -1, -2) @ g
        return unbroadcast(ga, a_data.shape), unbroadcast(gb, b_data.shape)

    return Tensor.from_op(a_data @ b_data, (a, b), backward, 'matmul')


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        first, *rest = sorted(shapes)
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='stack', left=first, right=rest[0]))
    count = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(count))

    return Tensor.from_op(np.stack([t.data for t in tensors], axis=axis), tensors, backward, 'stack')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='concat',
                                           left=tensors[0].shape, right=tensors[-1].shape), e)
    return Tensor.from_op(data, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), 'concat')


@dataclass
class Tape:
    """Recorded ops reachable from a root, in topological order."""

    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> 'Tape':
        order, visited = [], set()
        stack_ = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack_.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack_.append((parent, False))
        return cls(order)

    def run(self, seed: np.ndarray):
        """Propagate `seed` from the last node back to the leaves, visiting each node once."""
        grads = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                g = g.astype(node.dtype, copy=False)
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
