"""
Dense tensors with tape-based reverse-mode differentiation.

A ``Tensor`` wraps a read-only, C-contiguous numpy array. Operations in
``factorizephys.ops`` compute their forward result eagerly and, when a ``Tape``
is active and any input requires a gradient, append a node holding the parent
tensors and a closure over the saved activations. ``Tape.backward`` walks the
nodes once, in reverse recording order, and accumulates ``.grad`` on the leaf
tensors.

Example:
    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = ops.reduce_sum(ops.mul(w, w))
    ...     tape.backward(loss)
    >>> w.grad
    array([[2., 4.]], dtype=float32)
"""

from __future__ import annotations

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from factorizephys.errors import AutogradError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    Dense n-dimensional array with an optional gradient slot.

    Attributes:
        data: Read-only, row-major numpy array (float32 unless another dtype is asked for).
        requires_grad: Whether backward should deliver a gradient for this tensor.
        grad: Accumulated gradient (same shape as ``data``) or None.
        name: Optional label used in diagnostics and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Any = DEFAULT_DTYPE,
        name: Optional[str] = None,
    ):
        arr = np.array(data, dtype=dtype, order="C", copy=True)
        _check_finite("tensor", arr)
        arr.flags.writeable = False
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt an op result without copying or converting its dtype."""
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the data."""
        return np.array(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same data, cut from any tape."""
        return Tensor._wrap(self.data, requires_grad=False)

    def astype(self, dtype: Any, requires_grad: Optional[bool] = None) -> "Tensor":
        """Leaf copy in another precision (used by the 64-bit gradient checks)."""
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data, requires_grad=rg, dtype=dtype, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"


@dataclass
class Node:
    """One recorded operation: its output, parents and backward closure."""

    index: int
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn

    @property
    def parent_ids(self) -> Tuple[int, ...]:
        return tuple(id(t) for t in self.inputs)


@dataclass
class Tape:
    """
    Ordered record of differentiable operations.

    Parents always precede their children because nodes are appended as the
    forward pass runs. A tape supports a single backward pass; call ``reset``
    before reusing it.
    """

    nodes: List[Node] = field(default_factory=list)
    consumed: bool = False
    _producers: Dict[int, int] = field(default_factory=dict, repr=False)

    def __enter__(self) -> "Tape":
        _state().tapes.append(self)
        return self

    def __exit__(self, *exc: Any) -> None:
        stack = _state().tapes
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn) -> None:
        node = Node(len(self.nodes), op, tuple(inputs), output, backward_fn)
        self.nodes.append(node)
        self._producers[id(output)] = node.index

    def reset(self) -> None:
        self.nodes.clear()
        self._producers.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> List[Tensor]:
        return backward(self, loss)


class _GradState(threading.local):
    def __init__(self) -> None:
        self.tapes: List[Tape] = []
        self.no_grad_depth = 0


_STATE = _GradState()


def _state() -> _GradState:
    return _STATE


def current_tape() -> Optional[Tape]:
    """Innermost active tape, or None when not recording."""
    st = _state()
    if st.no_grad_depth > 0 or not st.tapes:
        return None
    return st.tapes[-1]


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording; results computed inside are constants for differentiation."""
    st = _state()
    st.no_grad_depth += 1
    try:
        yield
    finally:
        st.no_grad_depth -= 1


def _check_finite(op: str, arr: np.ndarray) -> None:
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise NonFiniteError(op)


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward_fn: BackwardFn) -> Tensor:
    """
    Wrap an op result and put it on the active tape when gradients are needed.

    Raises:
        NonFiniteError: If ``out`` contains NaN or Inf.
    """
    _check_finite(op, out)
    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, inputs, result, backward_fn)
    return result


def backward(tape: Tape, loss: Tensor) -> List[Tensor]:
    """
    Propagate d(loss)/d(x) to every leaf tensor that requires a gradient.

    Args:
        tape: Tape that recorded the computation of ``loss``.
        loss: Scalar tensor produced on ``tape``.

    Returns:
        The leaf tensors whose ``.grad`` was written.

    Raises:
        AutogradError: Non-scalar or detached loss, or the tape was already consumed.
    """
    if tape.consumed:
        raise AutogradError("backward was already run on this tape; call reset() first")
    if loss.size != 1:
        raise AutogradError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._producers:
        raise AutogradError("loss is not on this tape (detached or computed without recording)")

    last = tape._producers[id(loss)]
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}

    for node in reversed(tape.nodes[: last + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(
                    f"op '{node.op}' returned gradient of shape {pg.shape} for input of shape {parent.shape}"
                )
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
            if key not in tape._producers:
                leaves[key] = parent

    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g

    tape.consumed = True
    logger.debug("backward visited %d nodes, %d leaves", last + 1, len(leaves))
    return list(leaves.values())


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare tape gradients against central finite differences in 64-bit.

    Every input is copied to float64 with ``requires_grad=True``. When
    ``samples`` is given, only that many randomly chosen entries per input are
    perturbed.

    Returns:
        Largest relative error ``max|a - n| / max(max|a|, max|n|, 1e-12)`` over inputs.
    """
    xs = [t.astype(np.float64, requires_grad=True) for t in inputs]
    with Tape() as tape:
        loss = fn(*xs)
        tape.backward(loss)
    rng = np.random.default_rng(seed)

    worst = 0.0
    for pos, x in enumerate(xs):
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat_idx = np.arange(x.size)
        if samples is not None and samples < x.size:
            flat_idx = np.sort(rng.choice(x.size, size=samples, replace=False))
        numeric = np.zeros(len(flat_idx))
        for j, flat in enumerate(flat_idx):
            plus = x.numpy()
            minus = x.numpy()
            plus.reshape(-1)[flat] += eps
            minus.reshape(-1)[flat] -= eps
            f_plus = fn(*_swap(xs, pos, plus)).item()
            f_minus = fn(*_swap(xs, pos, minus)).item()
            numeric[j] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic.reshape(-1)[flat_idx]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(a - numeric).max(initial=0.0) / scale))
    return worst


def _swap(xs: List[Tensor], pos: int, arr: np.ndarray) -> List[Tensor]:
    out = list(xs)
    out[pos] = Tensor(arr, dtype=np.float64)
    return out


__all__ = [
    "DEFAULT_DTYPE",
    "Tensor",
    "Node",
    "Tape",
    "current_tape",
    "no_grad",
    "record",
    "backward",
    "gradcheck",
]
