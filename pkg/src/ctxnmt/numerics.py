"""Dense numpy tensors with tape-based reverse-mode differentiation.

Operations are plain functions over :class:`Tensor`. While a :class:`Graph`
is active (``with Graph() as g:``) every operation whose inputs require a
gradient is appended to the tape; outside a graph nothing is recorded, which
is the fast path used for inference and finite differences.

Arrays are batch-major: vectors are ``(batch, dim)`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes are inconsistent."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class DomainError(ValueError):
    """Input lies outside an operation's domain (e.g. an empty vector)."""


_ACTIVE: list["Graph"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None


class Graph:
    """Tape of recorded operations in creation (hence topological) order."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append((out, parents, backward_fn))
    return out


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Each recorded node is visited once, in reverse tape order. Gradients from
    several consumers of one tensor are summed.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if graph.nodes and not any(out is loss for out, _, _ in graph.nodes):
        raise ContractError("loss was not recorded on this graph (computed outside the with-block?)")
    loss.grad = np.ones_like(loss.data)
    for out, parents, fn in reversed(graph.nodes):
        g = out.grad
        if g is None:
            continue
        out.grad = None
        for parent, pg in zip(parents, fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            # Never accumulate in place: pg may alias another node's gradient.
            parent.grad = pg if parent.grad is None else parent.grad + pg
    loss.grad = None


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, k: float) -> Tensor:
    return _result(a.data * k, (a,), lambda g: (g * k,))


sigmoid_array = expit


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_array(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    if x.shape[axis] == 0:
        raise DomainError("softmax of an empty vector")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row max."""
    p = softmax_array(a.data)

    def fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (a,), fn)


def log_softmax_array(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ------------------------------------------------------------------ structural


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    datas = [p.data for p in parts]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[d.shape for d in datas]}") from None
    bounds = [0]
    for d in datas:
        bounds.append(bounds[-1] + d.shape[axis])

    def fn(g):
        if axis in (-1, g.ndim - 1):
            return tuple(g[..., lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))
        return tuple(np.split(g, bounds[1:-1], axis=axis))

    return _result(out, parts, fn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    if not 0 <= start <= stop <= a.shape[-1]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for width {a.shape[-1]}")
    shape = a.shape

    def fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _result(a.data[..., start:stop], (a,), fn)


def stack(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = tuple(parts)
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ShapeError(f"stack: differing shapes {sorted(shapes)}")
    return _result(
        np.stack([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take_rows(table: Tensor, idx) -> Tensor:
    """Differentiable row selection: ``table[idx]`` with scatter-add backward."""
    idx = np.asarray(idx, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError(f"row index out of range [0, {n})")
    shape = table.shape

    def fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, *shape[1:]))
        return (full,)

    return _result(table.data[idx], (table,), fn)


# --------------------------------------------------------------------- linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T (+ b)`` for a weight stored as (out, in)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} with weight {w.shape}")
    xd, wd = x.data, w.data
    y = xd @ wd.T
    if b is None:
        return _result(y, (x, w), lambda g: (g @ wd, g.T @ xd))
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} for weight {w.shape}")
    return _result(y + b.data, (x, w, b), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


def bmv(h: Tensor, q: Tensor) -> Tensor:
    """Batched mat-vec: ``(B, n, k) x (B, k) -> (B, n)``."""
    if h.data.ndim != 3 or q.data.ndim != 2 or h.shape[0] != q.shape[0] or h.shape[2] != q.shape[1]:
        raise ShapeError(f"bmv: {h.shape} with {q.shape}")
    hd, qd = h.data, q.data
    out = np.einsum("bnk,bk->bn", hd, qd)
    return _result(
        out,
        (h, q),
        lambda g: (g[:, :, None] * qd[:, None, :], np.einsum("bn,bnk->bk", g, hd)),
    )


def weighted_sum(alpha: Tensor, h: Tensor) -> Tensor:
    """``(B, n) x (B, n, k) -> (B, k)``: sum over positions weighted by ``alpha``."""
    if alpha.data.ndim != 2 or h.data.ndim != 3 or alpha.shape != h.shape[:2]:
        raise ShapeError(f"weighted_sum: {alpha.shape} with {h.shape}")
    ad, hd = alpha.data, h.data
    return _result(
        np.einsum("bn,bnk->bk", ad, hd),
        (alpha, h),
        lambda g: (np.einsum("bk,bnk->bn", g, hd), ad[:, :, None] * g[:, None, :]),
    )


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g, dtype=a.data.dtype),))


# ------------------------------------------------------------- training ops


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or no generator is given."""
    if p <= 0.0 or rng is None:
        return a
    keep = 1.0 - p
    mask = (rng.random(a.shape) < keep).astype(a.data.dtype) / keep
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Summed negative log-likelihood of integer ``targets`` under row-softmax ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ContractError("target index outside the output vocabulary")
    logp = log_softmax_array(logits.data)
    rows = np.arange(targets.size)
    loss = -logp[rows, targets].sum()

    def fn(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * g,)

    return _result(np.asarray(loss), (logits,), fn)


# ----------------------------------------------------------------------- LSTM


@dataclass
class LstmWeights:
    """One LSTM layer. Gate rows are stacked as [input, forget, candidate, output]."""

    w_x: Tensor  # (4h, d_in)
    w_h: Tensor  # (4h, h)
    b: Tensor  # (4h,)

    def __post_init__(self):
        rows = self.w_x.shape[0]
        if rows % 4 or self.w_h.shape != (rows, rows // 4) or self.b.shape != (rows,):
            raise ShapeError(
                f"inconsistent LSTM weights {self.w_x.shape}, {self.w_h.shape}, {self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, h: int, dtype=np.float64, scale: float = 0.1):
        w_x = rng.uniform(-scale, scale, (4 * h, d_in)).astype(dtype)
        w_h = rng.uniform(-scale, scale, (4 * h, h)).astype(dtype)
        b = np.zeros(4 * h, dtype=dtype)
        b[h : 2 * h] = 1.0
        return cls(Tensor(w_x, True), Tensor(w_h, True), Tensor(b, True))


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, w: LstmWeights) -> tuple[Tensor, Tensor]:
    """One step of a no-peephole LSTM on a batch of rows.

    Returns ``(h, c)`` with ``c = f*c_prev + i*g`` and ``h = o*tanh(c)``.
    Recorded as a single fused node with two outputs.
    """
    hid = w.hidden
    if x.shape[-1] != w.input_size or h_prev.shape[-1] != hid or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"lstm_cell: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"for weights ({4 * hid}, {w.input_size})"
        )
    xd, hd, cd = x.data, h_prev.data, c_prev.data
    z = xd @ w.w_x.data.T + hd @ w.w_h.data.T + w.b.data
    s = expit(z)
    i, f, o = s[:, :hid], s[:, hid : 2 * hid], s[:, 3 * hid :]
    g = np.tanh(z[:, 2 * hid : 3 * hid])
    c = f * cd + i * g
    tc = np.tanh(c)
    h = o * tc

    parents = (x, h_prev, c_prev, w.w_x, w.w_h, w.b)
    h_out = Tensor(h)
    c_out = Tensor(c)
    if not (_ACTIVE and any(p.requires_grad for p in parents)):
        return h_out, c_out

    # h and c are both outputs of one computation; c's gradient is folded into
    # the node recorded for h, so c's own node only forwards its grad there.
    wx, wh = w.w_x.data, w.w_h.data
    graph = _ACTIVE[-1]
    h_out.requires_grad = c_out.requires_grad = True

    pending: list[np.ndarray] = []

    def c_fn(gc):
        # c's node sits after h's on the tape, so it runs first in reverse.
        if h_out.grad is None:
            h_out.grad = np.zeros_like(h)
        pending.append(gc)
        return ()

    def h_fn(gh):
        gc = sum(pending) if pending else 0.0
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * cd * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                gh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        return (dz @ wx, dz @ wh, dc * f, dz.T @ xd, dz.T @ hd, dz.sum(axis=0))

    graph.nodes.append((h_out, parents, h_fn))
    graph.nodes.append((c_out, (), c_fn))
    return h_out, c_out


# --------------------------------------------------------- gradient checking


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor] | Iterable[Tensor],
    eps: float = 1e-5,
    report: dict | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be deterministic and build its loss from ``params``. The
    error for one coordinate is ``|a - n| / max(1, |a|, |n|)``. If ``report``
    is given it receives the max error per named parameter.
    """
    named = dict(params) if isinstance(params, dict) else {str(i): p for i, p in enumerate(params)}
    for p in named.values():
        p.grad = None
    with Graph() as g:
        loss = loss_fn()
    backward(g, loss)
    worst = 0.0
    for name, p in named.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        agrad = analytic.reshape(-1)
        local = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(loss_fn().data)
            flat[k] = orig - eps
            down = float(loss_fn().data)
            flat[k] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(agrad[k])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            local = max(local, err)
        if report is not None:
            report[name] = local
        worst = max(worst, local)
    for p in named.values():
        p.grad = None
    return worst
