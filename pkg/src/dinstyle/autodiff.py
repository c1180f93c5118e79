"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient::

    x = Tensor(np.arange(4.0), requires_grad=True)
    with Tape() as tape:
        y = (x * x).sum()
    backward(y, tape)
    x.grad  # -> [0, 2, 4, 6]
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

DEFAULT_EPS = 1e-5

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Backward was requested for something the tape cannot differentiate."""


_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def set_debug(enabled: bool) -> None:
    """Toggle NaN/Inf checking on every operation output (per thread)."""
    _state.debug = bool(enabled)


def debug_enabled() -> bool:
    return getattr(_state, "debug", False)


class Tensor:
    """A dense array of float64 values with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar; the heavy lifting lives in the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction.
    """

    nodes: list[Node] = field(default_factory=list)
    _index: dict[int, int] = field(default_factory=dict, repr=False)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse
            stack.remove(self)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, fn: BackwardFn) -> None:
        self._index[id(output)] = len(self.nodes)
        self.nodes.append(Node(op, inputs, output, fn))

    def produced(self, t: Tensor) -> bool:
        i = self._index.get(id(t))
        return i is not None and self.nodes[i].output is t

    def backward(self, output: Tensor) -> None:
        backward(output, self)

    def __len__(self) -> int:
        return len(self.nodes)


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_tape:
    """Suspend recording inside the block (used for finite differences and inference)."""

    def __enter__(self):
        self._saved = list(_tape_stack())
        _tape_stack().clear()
        return self

    def __exit__(self, *exc):
        _tape_stack()[:] = self._saved


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(op: str, out: np.ndarray, inputs: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    """Wrap ``out`` in a Tensor and record ``fn`` as its backward rule."""
    res = Tensor.__new__(Tensor)
    res.data = out
    res.grad = None
    res.name = None
    res.requires_grad = any(t.requires_grad for t in inputs)
    if debug_enabled() and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    if res.requires_grad:
        tape = current_tape()
        if tape is not None:
            tape.record(op, tuple(inputs), res, fn)
    return res


def backward(output: Tensor, tape: Tape) -> None:
    """Accumulate d(output)/d(t) into ``t.grad`` for every tensor on the tape.

    Gradients add to whatever is already in ``grad``; callers clear them
    between optimisation steps.
    """
    if output.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {output.shape}")
    if not tape.produced(output):
        raise TapeError("output was not produced by this tape")
    stop = tape._index[id(output)]
    pending: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    seen: dict[int, Tensor] = {id(output): output}
    for node in reversed(tape.nodes[: stop + 1]):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        _accumulate(node.output, g)
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
                seen[key] = t
    # what is left belongs to leaves
    for key, g in pending.items():
        _accumulate(seen[key], g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or b.size == 1 or a.size == 1:
        return
    if a.ndim == b.ndim and all(db in (1, da) for da, db in zip(a.shape, b.shape)):
        return
    if a.ndim == b.ndim and all(da in (1, db) for da, db in zip(a.shape, b.shape)):
        return
    raise ShapeError(f"cannot broadcast {b.shape} against {a.shape}")


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return make_op("add", a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return make_op("sub", a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_op("mul", ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_op("div", out, (a, b), bw)


def elementwise(op_kind: str, a, b) -> Tensor:
    """Dispatch ``add``/``sub``/``mul``/``div`` by name."""
    ops = {"add": add, "sub": sub, "mul": mul, "div": div}
    if op_kind not in ops:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    return ops[op_kind](a, b)


def neg(a: Tensor) -> Tensor:
    return make_op("neg", -a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_op("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_op("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum keeps NaN so a diverged network is not silently masked
    return make_op("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_op("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return make_op("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size // max(out.size, 1) if axis is not None else a.size

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return make_op("mean", np.asarray(out), (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return make_op("reshape", a.data.reshape(tuple(shape)), (a,), lambda g: (g.reshape(src),))


def channel_stats(x: Tensor, eps: float = DEFAULT_EPS) -> tuple[Tensor, Tensor]:
    """Per-sample, per-channel spatial mean and ``sqrt(var + eps)``.

    Variance is the population variance over H*W. Both results are shaped
    ``[N, C, 1, 1]``.
    """
    if x.ndim != 4:
        raise ShapeError(f"channel_stats expects [N,C,H,W], got {x.shape}")
    mu = mean(x, axis=(2, 3), keepdims=True)
    d = x - mu
    var = mean(square(d), axis=(2, 3), keepdims=True)
    return mu, sqrt(var + eps)


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    max_abs_error: float
    checked: int
    failures: int
    rel_tol: float
    errors: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: max_rel={self.max_rel_error:.3e} "
            f"max_abs={self.max_abs_error:.3e} n={self.checked} tol={self.rel_tol:g}"
        )


def fd_step(x: float, scale: float = 1e-5) -> float:
    return scale * max(1.0, abs(x))


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Union[Tensor, Sequence[Tensor]],
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-7,
    small: float = 1e-6,
    indices: Optional[Sequence[Optional[np.ndarray]]] = None,
    name: str = "grad_check",
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``fn(*inputs)`` with central differences.

    Elements whose analytic gradient is below ``small`` in magnitude are judged
    on absolute error (``abs_tol``) instead of relative error. ``indices``
    optionally restricts checking to flat positions per input. ``step`` sets
    the relative finite-difference step; deep ReLU networks need a small one
    so the probe does not straddle activation kinks.
    """
    single = isinstance(inputs, Tensor)
    xs = [inputs] if single else list(inputs)
    for x in xs:
        x.requires_grad = True
        x.grad = None
    with Tape() as tape:
        y = fn(*xs)
    backward(y, tape)
    analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in xs]

    rel_errs, abs_max, checked, failures = [], 0.0, 0, 0
    with no_tape():
        for k, x in enumerate(xs):
            flat = x.data.reshape(-1)
            idx = np.arange(flat.size) if indices is None or indices[k] is None else np.asarray(indices[k])
            ga = analytic[k].reshape(-1)
            for i in idx:
                orig = flat[i]
                h = fd_step(orig, step)
                flat[i] = orig + h
                fp = fn(*xs).item()
                flat[i] = orig - h
                fm = fn(*xs).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                a = ga[i]
                checked += 1
                if not np.isfinite(num) or not np.isfinite(a):
                    failures += 1
                    rel_errs.append(np.inf)
                    continue
                err = abs(a - num)
                abs_max = max(abs_max, err)
                if abs(a) < small:
                    rel = err / max(abs(a), abs(num), small)
                    ok = err <= abs_tol
                else:
                    rel = err / max(abs(a), abs(num))
                    ok = rel <= rel_tol
                rel_errs.append(rel)
                failures += not ok
    errs = np.asarray(rel_errs)
    return GradCheckReport(
        name=name,
        max_rel_error=float(errs.max()) if errs.size else 0.0,
        max_abs_error=abs_max,
        checked=checked,
        failures=failures,
        rel_tol=rel_tol,
        errors=errs,
    )


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
