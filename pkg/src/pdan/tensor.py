"""Tensor value type and the reverse-mode gradient tape."""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording of gradient records inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


@dataclass
class GradRecord:
    """What an operation needs to push gradients back to its inputs.

    ``backward`` maps the output gradient to one gradient per parent (None for
    parents that do not need one).
    """

    op: str
    parents: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense N-d array with an optional gradient record.

    Image tensors use the channels x height x width layout with a leading
    batch axis (N, C, H, W).  float32 is used for training, float64 for
    gradient checking; operations keep the dtype of their inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "record", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 record: GradRecord | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.record = record
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        op = f" op={self.record.op}" if self.record else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}{op})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Replay the gradient records reachable from this tensor in reverse
        topological order, accumulating into ``.grad`` of every tensor that
        requires a gradient."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.record is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            if node.requires_grad and node.name is not None:
                # Named intermediates keep their gradient for inspection.
                node.grad = g if node.grad is None else node.grad + g
            parent_grads = node.record.backward(g)
            for parent, pg in zip(node.record.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # debugging dump: uint32 rank, uint32 extents, then little-endian floats
    def dump(self, path: str | Path) -> None:
        arr = np.ascontiguousarray(self.data)
        code = "<f4" if arr.dtype == np.float32 else "<f8"
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(code).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "Tensor":
        raw = Path(path).read_bytes()
        (rank,) = struct.unpack_from("<I", raw, 0)
        shape = struct.unpack_from(f"<{rank}I", raw, 4)
        body = raw[4 + 4 * rank:]
        count = int(np.prod(shape)) if rank else 1
        if count == 0 or len(body) not in (4 * count, 8 * count):
            raise ValueError(f"tensor dump {path} has {len(body)} data bytes for shape {shape}")
        code = "<f4" if len(body) == 4 * count else "<f8"
        return cls(np.frombuffer(body, dtype=code).reshape(shape).copy())


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.record is not None:
            for parent in node.record.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def make_result(data: np.ndarray, op: str, parents: Sequence[Tensor],
                backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
                check_finite: bool = True) -> Tensor:
    """Wrap an op result, attaching a gradient record when any parent needs one."""
    if check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, record=GradRecord(op, tuple(parents), backward))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
