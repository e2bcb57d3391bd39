"""Minimal reverse-mode differentiable tensor kernel.

Dense float64 arrays wrapped in :class:`Tensor`, with primitive operations
that record onto an explicit :class:`Tape`. Calling :func:`backward` on a
scalar root replays the tape in reverse and fills ``.grad`` on every tensor
that requires it. Design constraints:

* double precision everywhere (checkability beats speed at this scale),
* row-major layout, explicit shape errors,
* no implicit broadcasting except scalar*tensor; row-vector broadcasts go
  through the explicit ``add_bias`` / ``mul_rowvec`` primitives.

Recording is opt-in: outside a ``recording(tape)`` block every operation is
a plain forward computation, which is what inference and stop-gradient
branches use.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateVectorError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "recording",
    "backward",
    "tensor",
    "parameter",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "mul_rowvec",
    "relu",
    "gelu",
    "softmax_rows",
    "layer_norm",
    "embedding_lookup",
    "concat_rows",
    "take_rows",
    "reshape",
    "sum_all",
    "row_sums",
    "exp",
    "log",
    "l2_normalize",
    "normalize_rows",
    "cosine_sim",
    "mlp",
]


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = self.name or "tensor"
        return f"<{tag} shape={self.data.shape} requires_grad={self.requires_grad}>"


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class _Node:
    __slots__ = ("op", "inputs", "out", "bwd")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], out: Tensor, bwd: Callable):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


class Tape:
    """Ordered record of primitive applications, inputs before outputs."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


_ACTIVE: Tape | None = None


@contextlib.contextmanager
def recording(tape: Tape):
    """Make ``tape`` the recording target for ops run inside the block."""
    global _ACTIVE
    prev = _ACTIVE
    _ACTIVE = tape
    try:
        yield tape
    finally:
        _ACTIVE = prev


def _result(op: str, inputs: tuple[Tensor, ...], data: np.ndarray, bwd: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _ACTIVE is not None:
        _ACTIVE.nodes.append(_Node(op, inputs, out, bwd))
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(tape: Tape, root: Tensor) -> None:
    """Fill ``.grad`` with d(root)/d(tensor) for every tensor on the tape.

    Grads of all tensors touched by the tape are reset first, so running
    backward twice over the same tape produces identical results.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    for node in tape.nodes:
        node.out.grad = None
        for t in node.inputs:
            t.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        node.bwd(g)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _require_2d(op: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{op} needs a 2-D tensor, got shape {t.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a)
    _require_2d("matmul", b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result("matmul", (a, b), out_data, bwd)


def transpose(a: Tensor) -> Tensor:
    _require_2d("transpose", a)
    out_data = np.ascontiguousarray(a.data.T)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g.T)

    return _result("transpose", (a,), out_data, bwd)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op} shape mismatch: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    def bwd(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g)
    return _result("add", (a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    def bwd(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, -g)
    return _result("sub", (a, b), a.data - b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    def bwd(g: np.ndarray) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return _result("mul", (a, b), a.data * b.data, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    def bwd(g: np.ndarray) -> None:
        _accum(a, g * c)
    return _result("scale", (a,), a.data * c, bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n row vector to every row of an m-by-n tensor."""
    _require_2d("add_bias", x)
    if b.data.ndim != 1 or b.data.shape[0] != x.data.shape[1]:
        raise ShapeError(f"add_bias bias shape {b.data.shape} does not fit {x.data.shape}")

    def bwd(g: np.ndarray) -> None:
        _accum(x, g)
        _accum(b, g.sum(axis=0))

    return _result("add_bias", (x, b), x.data + b.data[None, :], bwd)


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Scale every row of an m-by-n tensor elementwise by a length-n vector."""
    _require_2d("mul_rowvec", x)
    if v.data.ndim != 1 or v.data.shape[0] != x.data.shape[1]:
        raise ShapeError(f"mul_rowvec vector shape {v.data.shape} does not fit {x.data.shape}")

    def bwd(g: np.ndarray) -> None:
        _accum(x, g * v.data[None, :])
        _accum(v, (g * x.data).sum(axis=0))

    return _result("mul_rowvec", (x, v), x.data * v.data[None, :], bwd)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0). The subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0.0

    def bwd(g: np.ndarray) -> None:
        _accum(x, g * mask)

    return _result("relu", (x,), np.where(mask, x.data, 0.0), bwd)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + t)

    def bwd(g: np.ndarray) -> None:
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        d = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
        _accum(x, g * d)

    return _result("gelu", (x,), out_data, bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    _require_2d("softmax_rows", x)
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows input contains NaN")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        dot = (g * y).sum(axis=1, keepdims=True)
        _accum(x, y * (g - dot))

    return _result("softmax_rows", (x,), y, bwd)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise standardization (x - mean) / sqrt(var + eps), no affine part."""
    _require_2d("layer_norm", x)
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    s = np.sqrt(var + eps)
    y = (x.data - mu) / s

    def bwd(g: np.ndarray) -> None:
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        _accum(x, (g - gm - y * gy) / s)

    return _result("layer_norm", (x,), y, bwd)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    _require_2d("embedding_lookup", table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"embedding_lookup ids must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding_lookup id out of range for table with {table.data.shape[0]} rows"
        )
    out_data = table.data[idx]

    def bwd(g: np.ndarray) -> None:
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _result("embedding_lookup", (table,), out_data, bwd)


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    for p in parts:
        _require_2d("concat_rows", p)
    cols = {p.data.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows column counts differ: {sorted(cols)}")
    sizes = [p.data.shape[0] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=0)

    def bwd(g: np.ndarray) -> None:
        ofs = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[ofs : ofs + n])
            ofs += n

    return _result("concat_rows", parts, out_data, bwd)


def take_rows(x: Tensor, rows: Sequence[int]) -> Tensor:
    """Gather the given rows of a 2-D tensor (duplicates allowed)."""
    _require_2d("take_rows", x)
    idx = np.asarray(rows, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeError(f"take_rows row index out of range for shape {x.data.shape}")
    out_data = x.data[idx]

    def bwd(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, idx, g)

    return _result("take_rows", (x,), out_data, bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape {x.data.shape} -> {shape} changes element count")
    old = x.data.shape

    def bwd(g: np.ndarray) -> None:
        _accum(x, g.reshape(old))

    return _result("reshape", (x,), x.data.reshape(shape), bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g: np.ndarray) -> None:
        _accum(x, np.full_like(x.data, float(g.reshape(()))))
    return _result("sum_all", (x,), np.asarray(x.data.sum()), bwd)


def row_sums(x: Tensor) -> Tensor:
    """Sum each row of a 2-D tensor, producing a 1-D tensor."""
    _require_2d("row_sums", x)

    def bwd(g: np.ndarray) -> None:
        _accum(x, np.repeat(g[:, None], x.data.shape[1], axis=1))

    return _result("row_sums", (x,), x.data.sum(axis=1), bwd)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def bwd(g: np.ndarray) -> None:
        _accum(x, g * y)

    return _result("exp", (x,), y, bwd)


def log(x: Tensor) -> Tensor:
    if (x.data <= 0.0).any():
        raise NumericError("log needs strictly positive input")

    def bwd(g: np.ndarray) -> None:
        _accum(x, g / x.data)

    return _result("log", (x,), np.log(x.data), bwd)


def l2_normalize(x: Tensor) -> Tensor:
    """Normalize a 1-D tensor to unit Euclidean length."""
    if x.data.ndim != 1:
        raise ShapeError(f"l2_normalize needs a 1-D tensor, got shape {x.data.shape}")
    n = float(np.linalg.norm(x.data))
    if n == 0.0:
        raise DegenerateVectorError("l2_normalize of a zero vector")
    y = x.data / n

    def bwd(g: np.ndarray) -> None:
        _accum(x, (g - y * float(y @ g)) / n)

    return _result("l2_normalize", (x,), y, bwd)


def normalize_rows(x: Tensor) -> Tensor:
    """Normalize each row of a 2-D tensor to unit Euclidean length."""
    _require_2d("normalize_rows", x)
    n = np.linalg.norm(x.data, axis=1, keepdims=True)
    if (n == 0.0).any():
        raise DegenerateVectorError("normalize_rows hit a zero-norm row")
    y = x.data / n

    def bwd(g: np.ndarray) -> None:
        dots = (g * y).sum(axis=1, keepdims=True)
        _accum(x, (g - y * dots) / n)

    return _result("normalize_rows", (x,), y, bwd)


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two 1-D tensors, a scalar in [-1, 1]."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"cosine_sim needs 1-D tensors, got {a.data.shape} and {b.data.shape}")
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cosine_sim length mismatch: {a.data.shape} vs {b.data.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine_sim of a zero vector")
    s = float(a.data @ b.data) / (na * nb)

    def bwd(g: np.ndarray) -> None:
        gs = float(g.reshape(()))
        _accum(a, gs * (b.data / (na * nb) - s * a.data / (na * na)))
        _accum(b, gs * (a.data / (na * nb) - s * b.data / (nb * nb)))

    return _result("cosine_sim", (a, b), np.asarray(s), bwd)


def mlp(
    x: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    activation: str = "relu",
) -> Tensor:
    """Two-layer position-wise feed-forward block with relu or gelu."""
    h = add_bias(matmul(x, w1), b1)
    if activation == "relu":
        h = relu(h)
    elif activation == "gelu":
        h = gelu(h)
    else:
        raise ContractError(f"unknown mlp activation {activation!r}")
    return add_bias(matmul(h, w2), b2)
