"""
DiffTensor
----------
Core data structure of the reverse-mode engine.

A ``DiffTensor`` wraps a numpy array, an optional reference to the ``Function``
that produced it, and a lazily allocated gradient. ``backward()`` walks the
graph in reverse topological order and accumulates gradients into every node
that requires them.

Only the operations the restoration pipeline needs are implemented (see
``src.autodiff.functional``); there is no broadcasting beyond python scalars
and no higher-order differentiation.
"""

import contextlib
import threading
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import NonFiniteError, ShapeMismatchError

_DEFAULT_DTYPE = np.float32
_LOCAL = threading.local()


def get_default_dtype() -> np.dtype:
    return np.dtype(_DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    """Switch between 32-bit training mode and 64-bit gradient-check mode."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_LOCAL, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Build no graph inside the block (inference). Scoped to the calling thread."""
    previous = is_grad_enabled()
    _LOCAL.grad_enabled = False
    try:
        yield
    finally:
        _LOCAL.grad_enabled = previous


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` which maps
    the gradient of the output to one gradient per input tensor (``None`` for
    inputs that need none).
    """

    def __init__(self, *tensors: "DiffTensor"):
        self.tensors = tensors

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: "DiffTensor", **kwargs: Any) -> "DiffTensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        if not np.all(np.isfinite(out_data)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return DiffTensor(out_data, creator=func if requires_grad else None, requires_grad=requires_grad)


class DiffTensor:
    """
    Node of the computation graph: value + accumulated gradient + shape.

    Arrays passed in keep their floating dtype; python scalars and integer
    arrays are converted to the current default dtype.
    """

    __array_priority__ = 1000

    def __init__(
        self,
        data: Union[np.ndarray, float, int, Sequence[float]],
        creator: Optional[Function] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(get_default_dtype())
        self.data: np.ndarray = arr
        self.creator = creator
        self.requires_grad = requires_grad
        self.name = name
        self._grad: Optional[np.ndarray] = None

    # ------------------------------------------------------------------ #
    #  Gradient storage
    # ------------------------------------------------------------------ #
    @property
    def grad(self) -> Optional[np.ndarray]:
        return self._grad

    @grad.setter
    def grad(self, value: Optional[np.ndarray]) -> None:
        if value is not None:
            value = np.asarray(value, dtype=self.data.dtype)
            if value.shape != self.data.shape:
                raise ShapeMismatchError(
                    f"Gradient shape {value.shape} does not match value shape {self.data.shape}"
                )
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def _accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeMismatchError(
                f"Gradient shape {grad.shape} does not match value shape {self.data.shape}"
                f" for tensor {self.name or '<unnamed>'}"
            )
        if self._grad is None:
            self._grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self._grad += grad

    # ------------------------------------------------------------------ #
    #  Backpropagation
    # ------------------------------------------------------------------ #
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Accumulate d(self)/d(node) into every ancestor that requires grad.

        Without an explicit ``grad`` the tensor must be a scalar and the seed is 1.
        """
        if not self.requires_grad:
            return
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatchError(
                    f"backward() without a seed needs a scalar, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)

        order = self._topological_order()
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.creator is None:
                node._accumulate_grad(g)
                continue
            input_grads = node.creator.backward(g)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for parent, pg in zip(node.creator.tensors, input_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def _topological_order(self) -> List["DiffTensor"]:
        order: List[DiffTensor] = []
        visited = set()
        stack = [(self, False)]
        # iterative post-order
        while stack:
            node, expanded = stack.pop()
            if id(node) in visited:
                continue
            if expanded:
                visited.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    # ------------------------------------------------------------------ #
    #  Convenience
    # ------------------------------------------------------------------ #
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "DiffTensor":
        return DiffTensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; the ops live in functional.py
    def __add__(self, other):
        from src.autodiff import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from src.autodiff import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from src.autodiff import functional as F
        return F.add(F.neg(self), other)

    def __mul__(self, other):
        from src.autodiff import functional as F
        return F.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from src.autodiff import functional as F
        return F.neg(self)

    def __truediv__(self, other):
        if isinstance(other, DiffTensor):
            raise TypeError("Division is only supported by python scalars")
        return self.__mul__(1.0 / other)


def as_tensor(value: Union[DiffTensor, np.ndarray, float, int], requires_grad: bool = False) -> DiffTensor:
    if isinstance(value, DiffTensor):
        return value
    arr = np.asarray(value)
    if arr.dtype != get_default_dtype():
        arr = arr.astype(get_default_dtype())
    return DiffTensor(arr, requires_grad=requires_grad)
