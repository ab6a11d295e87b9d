"""Dense float32 tensors and a replayable gradient tape.

The autograd model is deliberately small: every differentiable operation
(see :mod:`graphfusion.ops`) records one entry on the currently active
:class:`Tape`.  Calling ``tape.backward(loss)`` seeds ``d loss = 1`` and
replays the records in reverse order, accumulating gradients into the
``grad`` buffer of every tensor that requires them.  Tensors touched by no
tape are plain immutable values and are safe to share across threads;
parallel work, when any, must use independent tapes.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_TLS = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> "Tape | None":
    """The innermost tape currently entered on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_recording():
    """Suspend recording on this thread, e.g. for finite-difference probes."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    """A dense N-dimensional float32 array with an optional gradient buffer.

    ``data`` is always a C-contiguous float32 ndarray.  ``grad`` starts as
    None (meaning zero) and is allocated lazily during backward replay.
    ``requires_grad`` marks leaves (parameters, probed inputs); outputs of
    recorded ops inherit it so gradients can flow through intermediates.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        # Not ascontiguousarray: that would promote 0-d scalars to shape (1,).
        self.data = np.asarray(data, dtype=np.float32, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """A defensive copy of the underlying array."""
        return self.data.copy()

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=requires_grad)

    @staticmethod
    def full(shape, value: float, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=np.float32), requires_grad=requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Ordered record of executed operations for reverse-mode replay.

    Used as a context manager::

        with Tape() as tape:
            loss = some_scalar_pipeline(x)
            tape.backward(loss)
        tape.clear()

    Each record pairs an op's output tensor with a closure that pushes the
    output's gradient into the op's inputs.  ``backward`` must be given a
    single-element tensor and replays the records newest-first, so a record
    sees the fully accumulated gradient of its output.  ``clear`` resets
    every gradient the tape touched back to zero (drops the buffer) and
    empties the record list, making the tape reusable.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._touched: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape context exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(
        self,
        output: Tensor,
        inputs: Sequence[Tensor],
        backward: Callable[[np.ndarray], None],
    ) -> None:
        """Append one op.  ``backward`` receives d(loss)/d(output)."""
        self._records.append((output, backward))
        self._touched.append(output)
        self._touched.extend(inputs)

    def backward(self, loss: Tensor) -> None:
        """Seed ``d loss = 1`` and replay all records in reverse order."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise RuntimeError("loss does not depend on any tensor recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for output, backward in reversed(self._records):
            if output.grad is None:
                continue
            backward(output.grad)

    def clear(self) -> None:
        """Drop all records and zero every gradient this tape touched."""
        for t in self._touched:
            t.grad = None
        self._records.clear()
        self._touched.clear()


def accumulate(t: Tensor, delta: np.ndarray) -> None:
    """Add ``delta`` into ``t.grad`` if ``t`` participates in gradients."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def record_op(
    output_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap an op's forward result, recording it when a tape is active."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(output_data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, backward)
    return out
