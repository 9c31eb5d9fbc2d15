"""Dense float64 tensors with a recorded computation graph.

Operations executed while a :class:`ComputationRecord` is active on the current
thread are appended to it together with their local adjoint rule, so that
:func:`backward` can replay them in reverse and return exact gradients for every
parameter tensor that took part in the computation.
"""
import dataclasses
import itertools
import logging
import os
import threading
from contextlib import contextmanager
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
from scipy import special

from .errors import NonFiniteError, RecordError, ShapeError

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]
Operand = Union["Tensor", float, int, Array]
Adjoint = Callable[[Array], Tuple[Optional[Array], ...]]

ELEMENTWISE_KINDS = ("add", "sub", "mul", "scale", "tanh", "relu", "sigmoid")

_node_ids = itertools.count(1)
_local = threading.local()
_debug_checks = os.environ.get("PENG_CDE_DEBUG", "") not in ("", "0")


def set_debug_checks(enabled: bool) -> None:
    """Check every operation output for NaN/Inf (slow, off by default)."""
    global _debug_checks
    _debug_checks = enabled


def debug_checks_enabled() -> bool:
    return _debug_checks


def _ensure_finite(data: Array, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Non-finite value in {what}")


@dataclasses.dataclass(frozen=True)
class RecordedOp:
    """One step of the computation record."""

    name: str
    inputs: Tuple[Optional[int], ...]
    output: int
    adjoint: Adjoint


class ComputationRecord:
    """Ordered list of recorded operations (a Wengert list)."""

    def __init__(self) -> None:
        self.ops: List[RecordedOp] = []
        self.params: Dict[int, "Tensor"] = {}
        self._outputs: Set[int] = set()

    def __len__(self) -> int:
        return len(self.ops)

    def append(self, op: RecordedOp, inputs: Sequence["Tensor"]) -> None:
        for tensor in inputs:
            if tensor.is_param and tensor.node_id is not None:
                self.params.setdefault(tensor.node_id, tensor)
        self.ops.append(op)
        self._outputs.add(op.output)

    def backward(self, loss: "Tensor") -> Dict[int, "Tensor"]:
        """Reverse-mode sweep from a scalar loss.

        Returns a map from parameter node-id to gradient for every parameter
        seen by this record; parameters the loss does not depend on get zeros.
        """
        if loss.data.size != 1:
            raise RecordError(f"loss must be a scalar, got shape {loss.shape}")
        if loss.node_id is None or (
            loss.node_id not in self._outputs and loss.node_id not in self.params
        ):
            raise RecordError("loss was not produced within this record")

        adjoints: Dict[int, Array] = {loss.node_id: np.ones_like(loss.data)}
        for op in reversed(self.ops):
            grad = adjoints.pop(op.output, None)
            if grad is None:
                continue
            for node_id, input_grad in zip(op.inputs, op.adjoint(grad)):
                if node_id is None or input_grad is None:
                    continue
                previous = adjoints.get(node_id)
                adjoints[node_id] = (
                    input_grad if previous is None else previous + input_grad
                )

        return {
            node_id: Tensor._wrap(
                np.array(adjoints[node_id], dtype=np.float64)
                if node_id in adjoints
                else np.zeros_like(param.data)
            )
            for node_id, param in self.params.items()
        }


def active_record() -> Optional[ComputationRecord]:
    return getattr(_local, "record", None)


@contextmanager
def record() -> Iterator[ComputationRecord]:
    """Activate a fresh computation record for the current thread."""
    previous = active_record()
    tape = ComputationRecord()
    _local.record = tape
    try:
        yield tape
    finally:
        _local.record = previous


@contextmanager
def no_record() -> Iterator[None]:
    """Suspend recording, e.g. for validation passes inside a training step."""
    previous = active_record()
    _local.record = None
    try:
        yield
    finally:
        _local.record = previous


def backward(
    loss: "Tensor", tape: Optional[ComputationRecord] = None
) -> Dict[int, "Tensor"]:
    tape = tape if tape is not None else active_record()
    if tape is None:
        raise RecordError("backward() needs an active computation record")
    return tape.backward(loss)


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise ShapeError(f"Cannot broadcast shapes {a} and {b}") from None


def _unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _emit(
    name: str, data: Array, inputs: Sequence["Tensor"], adjoint: Adjoint
) -> "Tensor":
    out = Tensor._wrap(data)
    if _debug_checks:
        _ensure_finite(out.data, f"output of {name}")
    tape = active_record()
    if tape is not None and any(t.node_id is not None for t in inputs):
        out.node_id = next(_node_ids)
        tape.append(
            RecordedOp(
                name=name,
                inputs=tuple(t.node_id for t in inputs),
                output=out.node_id,
                adjoint=adjoint,
            ),
            inputs,
        )
    return out


def as_tensor(value: Operand) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Tensor:
    """Row-major float64 array plus an optional handle into the active record."""

    __slots__ = ("data", "node_id", "is_param", "name")

    def __init__(self, data: Union[Array, Sequence[float], float, int]) -> None:
        self.data: Array = np.array(data, dtype=np.float64)
        _ensure_finite(self.data, "tensor creation")
        self.node_id: Optional[int] = None
        self.is_param = False
        self.name: Optional[str] = None

    @classmethod
    def _wrap(cls, data: Array) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.node_id = None
        out.is_param = False
        out.name = None
        return out

    @classmethod
    def parameter(
        cls, data: Union[Array, Sequence[float], float], name: Optional[str] = None
    ) -> "Tensor":
        out = cls(data)
        out.node_id = next(_node_ids)
        out.is_param = True
        out.name = name
        return out

    @classmethod
    def zeros(cls, *shape: int) -> "Tensor":
        return cls._wrap(np.zeros(shape))

    @classmethod
    def ones(cls, *shape: int) -> "Tensor":
        return cls._wrap(np.ones(shape))

    def __repr__(self) -> str:
        kind = "parameter" if self.is_param else "tensor"
        return f"{kind}(shape={self.shape}, name={self.name!r})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    # Arithmetic ---------------------------------------------------------------

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, as_tensor(other))

    def __radd__(self, other: Operand) -> "Tensor":
        return add(as_tensor(other), self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, as_tensor(other))

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(as_tensor(other), self)

    def __mul__(self, other: Operand) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    def __rmul__(self, other: Operand) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: Operand) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, as_tensor(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: object) -> "Tensor":
        return getitem(self, index)

    # Unary helpers ------------------------------------------------------------

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def square(self) -> "Tensor":
        return square(self)

    def softplus(self) -> "Tensor":
        return softplus(self)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


# Binary operations --------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    a_data, b_data = a.data, b.data
    return _emit(
        "mul",
        a_data * b_data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b_data, a.shape),
            _unbroadcast(g * a_data, b.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    a_data, b_data = a.data, b.data
    return _emit(
        "div",
        a_data / b_data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b_data, a.shape),
            _unbroadcast(-g * a_data / (b_data * b_data), b.shape),
        ),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit("scale", a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data
    return _emit(
        "matmul",
        a_data @ b_data,
        (a, b),
        lambda g: (g @ b_data.T, a_data.T @ g),
    )


# Unary operations ---------------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float64)
    return _emit("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = special.expit(a.data)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    return _emit(
        "softplus", np.logaddexp(0.0, x), (a,), lambda g: (g * special.expit(x),)
    )


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _emit("sqrt", y, (a,), lambda g: (0.5 * g / y,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _emit("square", x * x, (a,), lambda g: (2.0 * g * x,))


def identity(a: Tensor) -> Tensor:
    return a


def elementwise(kind: str, a: Tensor, b: Optional[Operand] = None) -> Tensor:
    """Dispatch one of the named entrywise operations.

    ``scale`` takes its factor as ``b`` (a Python number).
    """
    if kind in ("add", "sub", "mul"):
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        other = as_tensor(b)
        return {"add": add, "sub": sub, "mul": mul}[kind](a, other)
    if kind == "scale":
        if not isinstance(b, (int, float)):
            raise ShapeError("scale needs a numeric factor")
        return scale(a, float(b))
    if kind in ("tanh", "relu", "sigmoid"):
        return {"tanh": tanh, "relu": relu, "sigmoid": sigmoid}[kind](a)
    raise ValueError(f"Unknown elementwise kind {kind!r}; expected {ELEMENTWISE_KINDS}")


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "identity": identity,
}


# Shape operations ---------------------------------------------------------------


def reduce_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def adjoint(g: Array) -> Tuple[Optional[Array], ...]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), adjoint)


def reduce_mean(
    a: Tensor, axis: Optional[int] = None, keepdims: bool = False
) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"Cannot reshape {original} into {tuple(shape)}") from None
    return _emit("reshape", data, (a,), lambda g: (g.reshape(original),))


def getitem(a: Tensor, index: object) -> Tensor:
    shape = a.shape

    def adjoint(g: Array) -> Tuple[Optional[Array], ...]:
        full = np.zeros(shape)
        np.add.at(full, index, g)  # type: ignore[arg-type]
        return (full,)

    out = np.array(a.data[index])  # type: ignore[index]
    return _emit("getitem", out, (a,), adjoint)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    splits = np.cumsum(sizes)[:-1]
    return _emit(
        "concat",
        data,
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    if len({t.shape for t in tensors}) != 1:
        raise ShapeError("stack needs tensors of equal shape")
    return _emit(
        "stack",
        np.stack([t.data for t in tensors]),
        tuple(tensors),
        lambda g: tuple(g[i] for i in range(g.shape[0])),
    )


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    total = tensors[0]
    for tensor in tensors[1:]:
        total = total + tensor
    return total


# Finite-difference oracle -------------------------------------------------------


def gradcheck(
    f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5
) -> float:
    """Max over every parameter entry of |AD - FD| / (|FD| + 1e-12).

    ``f`` must read the parameters by reference and be deterministic; central
    differences perturb each entry in place and restore it afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    with record() as tape:
        loss = f()
    _ensure_finite(loss.data, "gradcheck loss")
    grads = tape.backward(loss)

    worst = 0.0
    for param in params:
        if param.node_id is None:
            raise RecordError("gradcheck needs parameter tensors")
        analytic = grads[param.node_id].data if param.node_id in grads else None
        if analytic is None:
            analytic = np.zeros_like(param.data)
        numeric = np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            with no_record():
                flat[i] = original + h
                plus = f().item()
                flat[i] = original - h
                minus = f().item()
            flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NonFiniteError(f"Non-finite loss while perturbing {param!r}")
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * h)
        error = float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)))
        logger.debug("gradcheck param=%s rel_error=%.3e", param.name, error)
        worst = max(worst, error)
    return worst
