"""Reverse-mode automatic differentiation over dense float64 tensors.

The engine is intentionally small: a :class:`Tensor` wraps a numpy array,
every operation records its inputs and a gradient closure, and
:func:`backward` replays the recording in reverse topological order.
There is no broadcasting except against scalars, no mixed precision and
no in-graph mutation; shape discipline is explicit so that shape bugs
fail loudly instead of propagating.

Any module can register new differentiable operations through
:func:`make_node` / :func:`accumulate_grad`; the convolution and
normalization layers are built this way.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import GraphError, NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "make_node",
    "accumulate_grad",
    "backward",
    "topo_order",
    "zero_grads",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "scale",
    "matmul",
    "tensor_sum",
    "tensor_mean",
    "log",
    "clamp",
    "transpose",
    "pad_end",
    "crop",
    "frame_signal",
    "overlap_add",
    "finite_difference_check",
]

_RECORDING = True


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording inside the block; ops return plain values."""
    global _RECORDING
    previous = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = previous


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``grad`` is ``None`` until :func:`backward` populates it and only
    tensors created with ``requires_grad=True`` (or derived from one)
    ever receive gradients. Tensors are safe to hand between threads;
    a recorded graph must stay on the thread that built it.
    """

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

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

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_ensure_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _ensure_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    """Wrap an op result, recording parents and a gradient closure.

    ``backward_fn`` receives the gradient w.r.t. the result and must push
    contributions into every ``requires_grad`` parent via
    :func:`accumulate_grad`. Recording is skipped under :func:`no_grad`
    or when no parent requires gradients.
    """
    try:
        out = Tensor(data)
    except NonFiniteError:
        raise NonFiniteError(f"{op} produced non-finite values") from None
    if _RECORDING and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def accumulate_grad(t: Tensor, grad: np.ndarray) -> None:
    """Add a gradient contribution into ``t.grad`` (no-op unless needed)."""
    if not t.requires_grad:
        return
    _check_finite(grad, f"backward of {t._op}")
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def topo_order(root: Tensor) -> list[Tensor]:
    """Topologically ordered record of the graph below ``root`` (parents first)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` tensor below ``loss``.

    ``loss`` must be a scalar produced through recorded operations. Calling
    backward again over tensors that still hold gradients raises
    :class:`GraphError`; clear them first (``zero_grads`` or an optimizer's
    ``zero_grad``). Each node's gradient rule runs exactly once.
    """
    if loss.shape not in ((), (1,)):
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any requires_grad tensor")
    order = topo_order(loss)
    for node in order:
        if node.grad is not None:
            raise GraphError(
                "stale gradients in graph; zero them before calling backward again"
            )
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def _scalar_shaped(t: Tensor) -> bool:
    return t.shape == () or t.shape == (1,)


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a broadcast gradient back to a scalar-shaped tensor."""
    return np.asarray(grad.sum(), dtype=np.float64).reshape(shape)


def _binary(a, b, fwd, da_fn, db_fn, op: str) -> Tensor:
    a = _ensure_tensor(a)
    b = _ensure_tensor(b)
    if a.shape != b.shape and not (_scalar_shaped(a) or _scalar_shaped(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")
    a_data = a.data.reshape(()) if _scalar_shaped(a) and not _scalar_shaped(b) else a.data
    b_data = b.data.reshape(()) if _scalar_shaped(b) and not _scalar_shaped(a) else b.data
    with np.errstate(all="ignore"):  # non-finite results raise NonFiniteError below
        out = fwd(a_data, b_data)

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = da_fn(g, a_data, b_data)
            if ga.shape != a.shape:
                ga = _reduce_to(ga, a.shape)
            accumulate_grad(a, ga)
        if b.requires_grad:
            gb = db_fn(g, a_data, b_data)
            if gb.shape != b.shape:
                gb = _reduce_to(gb, b.shape)
            accumulate_grad(b, gb)

    return make_node(out, (a, b), backward_fn, op)


def add(a, b) -> Tensor:
    return _binary(
        a, b,
        lambda x, y: x + y,
        lambda g, x, y: g,
        lambda g, x, y: g,
        "add",
    )


def sub(a, b) -> Tensor:
    return _binary(
        a, b,
        lambda x, y: x - y,
        lambda g, x, y: g,
        lambda g, x, y: -g,
        "sub",
    )


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product; one side may be scalar-shaped."""
    return _binary(
        a, b,
        lambda x, y: x * y,
        lambda g, x, y: g * y,
        lambda g, x, y: g * x,
        "mul",
    )


def div(a, b) -> Tensor:
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "div",
    )


def neg(a) -> Tensor:
    a = _ensure_tensor(a)
    return make_node(-a.data, (a,), lambda g: accumulate_grad(a, -g), "neg")


def scale(a, factor: float) -> Tensor:
    """Multiply by a plain (non-learnable) scalar."""
    a = _ensure_tensor(a)
    factor = float(factor)
    return make_node(a.data * factor, (a,), lambda g: accumulate_grad(a, g * factor), "scale")


def matmul(a, b) -> Tensor:
    """Strict 2-D matrix product; gradients dA = g @ B^T and dB = A^T @ g."""
    a = _ensure_tensor(a)
    b = _ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate_grad(a, g @ b.data.T)
        if b.requires_grad:
            accumulate_grad(b, a.data.T @ g)

    return make_node(out, (a, b), backward_fn, "matmul")


def tensor_sum(a) -> Tensor:
    a = _ensure_tensor(a)
    out = np.asarray(a.data.sum())

    def backward_fn(g: np.ndarray) -> None:
        accumulate_grad(a, np.full_like(a.data, float(g)))

    return make_node(out, (a,), backward_fn, "sum")


def tensor_mean(a) -> Tensor:
    a = _ensure_tensor(a)
    return scale(tensor_sum(a), 1.0 / a.size)


def log(a) -> Tensor:
    """Natural logarithm; non-positive inputs surface as NonFiniteError."""
    a = _ensure_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward_fn(g: np.ndarray) -> None:
        accumulate_grad(a, g / a.data)

    return make_node(out, (a,), backward_fn, "log")


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Hard clip; gradient passes only where the input is inside [lo, hi]."""
    a = _ensure_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data)
    if lo is not None:
        mask *= a.data >= lo
    if hi is not None:
        mask *= a.data <= hi

    def backward_fn(g: np.ndarray) -> None:
        accumulate_grad(a, g * mask)

    return make_node(out, (a,), backward_fn, "clamp")


def transpose(a) -> Tensor:
    a = _ensure_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")

    def backward_fn(g: np.ndarray) -> None:
        accumulate_grad(a, np.ascontiguousarray(g.T))

    return make_node(np.ascontiguousarray(a.data.T), (a,), backward_fn, "transpose")


def pad_end(a, count: int) -> Tensor:
    """Append ``count`` zeros to a 1-D tensor."""
    a = _ensure_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"pad_end needs a 1-D tensor, got {a.shape}")
    if count < 0:
        raise ShapeError("pad_end count must be non-negative")
    n = a.size
    out = np.concatenate([a.data, np.zeros(count)])

    def backward_fn(g: np.ndarray) -> None:
        accumulate_grad(a, g[:n])

    return make_node(out, (a,), backward_fn, "pad_end")


def crop(a, length: int) -> Tensor:
    """Keep the first ``length`` samples of a 1-D tensor."""
    a = _ensure_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"crop needs a 1-D tensor, got {a.shape}")
    if not 0 < length <= a.size:
        raise ShapeError(f"crop length {length} outside [1, {a.size}]")

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[:length] = g
        accumulate_grad(a, full)

    return make_node(a.data[:length].copy(), (a,), backward_fn, "crop")


def frame_signal(a, block_len: int) -> Tensor:
    """Split a 1-D signal into half-overlapping rows of ``block_len`` samples.

    The signal length must already be a multiple of the hop
    (``block_len / 2``) and at least one full block; callers pad first.
    Block ``l`` (0-based) covers samples ``[l*hop, l*hop + block_len)``,
    so the inverse map is :func:`overlap_add`.
    """
    a = _ensure_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"frame_signal needs a 1-D tensor, got {a.shape}")
    if block_len < 2 or block_len % 2:
        raise ShapeError(f"block length must be even and >= 2, got {block_len}")
    hop = block_len // 2
    n = a.size
    if n < block_len or n % hop:
        raise ShapeError(
            f"signal length {n} must be a multiple of hop {hop} and >= {block_len}"
        )
    n_blocks = n // hop - 1
    out = np.empty((n_blocks, block_len))
    out[:, :hop] = a.data[: n_blocks * hop].reshape(n_blocks, hop)
    out[:, hop:] = a.data[hop:].reshape(n_blocks, hop)

    def backward_fn(g: np.ndarray) -> None:
        dx = np.zeros_like(a.data)
        dx[: n_blocks * hop] += g[:, :hop].reshape(-1)
        dx[hop:] += g[:, hop:].reshape(-1)
        accumulate_grad(a, dx)

    return make_node(out, (a,), backward_fn, "frame_signal")


def overlap_add(blocks, hop: int) -> Tensor:
    """Sum half-overlapping rows back into a 1-D signal (adjoint of framing)."""
    blocks = _ensure_tensor(blocks)
    if blocks.ndim != 2:
        raise ShapeError(f"overlap_add needs a 2-D tensor, got {blocks.shape}")
    n_blocks, block_len = blocks.shape
    if n_blocks < 1:
        raise ShapeError("overlap_add needs at least one block")
    if hop * 2 != block_len:
        raise ShapeError(f"hop {hop} must be half the block length {block_len}")
    out = np.zeros((n_blocks + 1) * hop)
    out[: n_blocks * hop] += blocks.data[:, :hop].reshape(-1)
    out[hop:] += blocks.data[:, hop:].reshape(-1)

    def backward_fn(g: np.ndarray) -> None:
        db = np.empty_like(blocks.data)
        db[:, :hop] = g[: n_blocks * hop].reshape(n_blocks, hop)
        db[:, hop:] = g[hop:].reshape(n_blocks, hop)
        accumulate_grad(blocks, db)

    return make_node(out, (blocks,), backward_fn, "overlap_add")


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    h: float = 1e-6,
) -> float:
    """Compare analytic gradients of ``f`` at ``x`` against central differences.

    ``f`` must be deterministic and scalar-valued. Returns the maximum over
    coordinates of ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(x0.copy(), requires_grad=True)
    out = f(probe)
    backward(out)
    analytic = probe.grad.copy()
    for node in topo_order(out):  # leave captured leaves clean for the caller
        node.zero_grad()

    def value_at(arr: np.ndarray) -> float:
        with no_grad():
            return f(Tensor(arr)).item()

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    base = x0.reshape(-1)
    for i in range(base.size):
        shifted = base.copy()
        shifted[i] = base[i] + h
        up = value_at(shifted.reshape(x0.shape))
        shifted[i] = base[i] - h
        down = value_at(shifted.reshape(x0.shape))
        flat[i] = (up - down) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
