"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` records elementary operations as they execute; calling
:meth:`Tape.backward` on a scalar output walks the recorded operations in
reverse and returns exact gradients for every watched parameter. Tapes are
dynamic: one tape per forward pass, discarded after the optimizer step.

A tape and the tensors on it belong to a single thread; independent tapes
may run concurrently.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import ShapeError

# Gradient map: watched-parameter node id -> gradient array of the same shape.
GradientMap = Dict[int, np.ndarray]

# When True, every recorded forward output is checked for NaN/Inf. Slow;
# enabled by the test suite, off in production paths.
CHECK_FINITE = False

# op kind -> fn(values, attrs, needs) -> (out_values, backward)
# backward(grad_out) returns one gradient (or None) per input, in order.
_OPS: Dict[str, Callable] = {}

_libc = None


def release_free_heap() -> None:
    """Hand freed allocator pages back to the OS; no-op outside glibc.

    Training steps churn tens-of-megabyte temporaries through malloc's
    main arena, which grows by brk and cannot shrink past the topmost
    live chunk; without this the process RSS creeps up by gigabytes over
    a long run. malloc_trim(0) releases every whole free page. Purely an
    allocator hint: computed values are unaffected.
    """
    global _libc
    if _libc is None:
        try:
            import ctypes

            _libc = ctypes.CDLL("libc.so.6")
            _libc.malloc_trim.argtypes = [ctypes.c_size_t]
        except OSError:
            _libc = False
    if _libc:
        _libc.malloc_trim(0)


def register_op(kind: str):
    """Register a differentiable operation under `kind`."""

    def deco(fn):
        _OPS[kind] = fn
        return fn

    return deco


class Tensor:
    """An n-dimensional float64 array, optionally recorded on a tape.

    `node_id` is None for constants (not recorded); constants participate
    in forward computation but receive no gradient.
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape", node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the element values."""
        return self.data.ravel()

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return self.tape.constant(np.broadcast_to(np.float64(other), self.data.shape))

    def __add__(self, other):
        return self.tape.record("add", [self, self._lift(other)])

    def __sub__(self, other):
        return self.tape.record("sub", [self, self._lift(other)])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.record("scale", [self], factor=float(other))
        return self.tape.record("mul", [self, other])

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.record("neg", [self])

    def __matmul__(self, other):
        return self.tape.record("matmul", [self, self._lift(other)])

    def sum(self):
        return self.tape.record("sum", [self])

    def reshape(self, shape):
        return self.tape.record("reshape", [self], shape=tuple(shape))

    def __repr__(self):
        tag = "const" if self.node_id is None else f"node {self.node_id}"
        return f"Tensor(shape={self.shape}, {tag})"


class _TapeOp:
    """One recorded operation: input/output node ids plus a backward rule."""

    __slots__ = ("kind", "input_ids", "output_id", "backward")

    def __init__(self, kind, input_ids, output_id, backward):
        self.kind = kind
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward = backward


class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    def __init__(self):
        self._ops: List[_TapeOp] = []
        self._next_id = 0
        # id(array) -> (node id, array). Holding the array itself (not a
        # Tensor) keeps the id stable and leaves no reference back to this
        # tape, so finished tapes free by reference counting alone instead
        # of waiting on the cycle collector.
        self._watched: Dict[int, tuple] = {}
        self._param_ids: List[int] = []

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def constant(self, data) -> Tensor:
        """Wrap an array as a non-recorded constant on this tape."""
        return Tensor(data, self, None)

    def watch(self, array: np.ndarray) -> Tensor:
        """Register a parameter leaf; one node per array object."""
        entry = self._watched.get(id(array))
        if entry is None:
            entry = (self._new_id(), array)
            self._watched[id(array)] = entry
            self._param_ids.append(entry[0])
        return Tensor(entry[1], self, entry[0])

    def node_for(self, array: np.ndarray) -> Optional[Tensor]:
        """Return the leaf for a watched array, or None if never watched."""
        entry = self._watched.get(id(array))
        if entry is None:
            return None
        node_id, arr = entry
        return Tensor(arr, self, node_id)

    @property
    def num_ops(self) -> int:
        return len(self._ops)

    def record(self, kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
        """Execute an operation and, if any input is recorded, add it to the tape."""
        try:
            op = _OPS[kind]
        except KeyError:
            raise ValueError(f"unknown operation kind {kind!r}") from None
        needs = [t.node_id is not None for t in inputs]
        out_values, backward = op([t.data for t in inputs], attrs, needs)
        if CHECK_FINITE and not np.all(np.isfinite(out_values)):
            raise FloatingPointError(f"non-finite values in output of {kind!r}")
        if not any(needs):
            return Tensor(out_values, self, None)
        out = Tensor(out_values, self, self._new_id())
        self._ops.append(
            _TapeOp(kind, [t.node_id for t in inputs], out.node_id, backward)
        )
        return out

    def backward(self, loss: Tensor) -> GradientMap:
        """Gradients of a recorded scalar w.r.t. every watched parameter.

        Each recorded operation is visited exactly once, in reverse order;
        gradients at fan-out nodes accumulate by summation. Deterministic:
        repeated calls yield bitwise-identical results.
        """
        if loss.tape is not self or loss.node_id is None:
            raise ValueError("backward: loss was not recorded on this tape")
        if loss.data.shape != ():
            raise ShapeError(
                f"backward: loss must be scalar, got shape {loss.data.shape}"
            )
        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=np.float64)}
        for op in reversed(self._ops):
            # Reverse order means every consumer of this output has already
            # run, so its accumulated gradient is final; pop to free memory.
            g_out = grads.pop(op.output_id, None)
            if g_out is None:
                continue
            for input_id, g_in in zip(op.input_ids, op.backward(g_out)):
                if input_id is None or g_in is None:
                    continue
                prev = grads.get(input_id)
                grads[input_id] = g_in if prev is None else prev + g_in
        return {nid: grads[nid] for nid in self._param_ids if nid in grads}


# ---------------------------------------------------------------------------
# Elementary operations.


def _require(cond: bool, op: str, msg: str):
    if not cond:
        raise ShapeError(f"{op}: {msg}")


@register_op("add")
def _op_add(values, attrs, needs):
    a, b = values
    _require(a.shape == b.shape, "add", f"operand shapes differ ({a.shape} vs {b.shape})")

    def backward(g):
        return [g if needs[0] else None, g if needs[1] else None]

    return a + b, backward


@register_op("sub")
def _op_sub(values, attrs, needs):
    a, b = values
    _require(a.shape == b.shape, "sub", f"operand shapes differ ({a.shape} vs {b.shape})")

    def backward(g):
        return [g if needs[0] else None, -g if needs[1] else None]

    return a - b, backward


@register_op("mul")
def _op_mul(values, attrs, needs):
    a, b = values
    _require(a.shape == b.shape, "mul", f"operand shapes differ ({a.shape} vs {b.shape})")

    def backward(g):
        return [g * b if needs[0] else None, g * a if needs[1] else None]

    return a * b, backward


@register_op("neg")
def _op_neg(values, attrs, needs):
    (a,) = values

    def backward(g):
        return [-g]

    return -a, backward


@register_op("scale")
def _op_scale(values, attrs, needs):
    (a,) = values
    c = attrs["factor"]

    def backward(g):
        return [g * c]

    return a * c, backward


@register_op("matmul")
def _op_matmul(values, attrs, needs):
    a, b = values
    _require(a.ndim == 2 and b.ndim == 2, "matmul", "operands must be 2-dimensional")
    _require(
        a.shape[1] == b.shape[0],
        "matmul",
        f"inner dimensions differ ({a.shape} @ {b.shape})",
    )

    def backward(g):
        return [
            g @ b.T if needs[0] else None,
            a.T @ g if needs[1] else None,
        ]

    return a @ b, backward


@register_op("sum")
def _op_sum(values, attrs, needs):
    (a,) = values
    shape = a.shape

    def backward(g):
        return [np.full(shape, float(g), dtype=np.float64)]

    return np.asarray(a.sum(), dtype=np.float64), backward


@register_op("reshape")
def _op_reshape(values, attrs, needs):
    (a,) = values
    new_shape = attrs["shape"]
    old_shape = a.shape

    def backward(g):
        return [g.reshape(old_shape)]

    return a.reshape(new_shape), backward


@register_op("rows")
def _op_rows(values, attrs, needs):
    (a,) = values
    start, stop = attrs["start"], attrs["stop"]
    _require(0 <= start <= stop <= a.shape[0], "rows", f"slice [{start}:{stop}] outside axis of length {a.shape[0]}")
    full_shape = a.shape

    def backward(g):
        out = np.zeros(full_shape, dtype=np.float64)
        out[start:stop] = g
        return [out]

    return a[start:stop], backward


@register_op("concat")
def _op_concat(values, attrs, needs):
    _require(len(values) >= 1, "concat", "needs at least one input")
    sizes = [v.shape[0] for v in values]

    def backward(g):
        outs = []
        offset = 0
        for n, need in zip(sizes, needs):
            outs.append(g[offset : offset + n] if need else None)
            offset += n
        return outs

    return np.concatenate(values, axis=0), backward


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the leading axis."""
    return x.tape.record("rows", [x], start=start, stop=stop)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the leading axis."""
    return tensors[0].tape.record("concat", list(tensors))


def finite_difference_check(
    function: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    `function` maps a tensor to a scalar tensor; it is evaluated on fresh
    tapes. Returns +inf when the analytic gradient is unavailable.
    """
    x0 = np.asarray(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    tape = Tape()
    x = tape.watch(x0)
    loss = function(x)
    try:
        grads = tape.backward(loss)
    except (ShapeError, ValueError):
        return float("inf")
    analytic = grads.get(x.node_id)
    if analytic is None:
        return float("inf")
    analytic = analytic.ravel()

    def eval_at(arr: np.ndarray) -> float:
        t = Tape()
        return float(function(t.constant(arr)).data)

    flat = x0.ravel()
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        hi = eval_at(bumped.reshape(x0.shape))
        bumped[i] = flat[i] - step
        lo = eval_at(bumped.reshape(x0.shape))
        numeric = (hi - lo) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
