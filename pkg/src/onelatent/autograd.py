"""Dense float64 tensors with reverse-mode automatic differentiation.

Small by design: just enough operations to express a decoder-only
transformer, its two loss terms, and the latent-injection mechanics.
Everything is float64 and single-threaded per graph.

Determinism policy (applies to every op in this module):
  * Elementwise ops are exact per element.
  * Axis reductions (sum/mean/max) use numpy's fixed per-row reduction on
    C-contiguous buffers; the order depends only on the reduced length.
  * Matrix products go through BLAS at a fixed shape per call site. BLAS
    accumulation order varies with the *shape* of the product but not with
    the *values* in other rows, so results for a given row are reproducible
    whenever the full product shape is unchanged. The engine above this
    module only ever compares results computed at identical shapes, and
    tests/test_autograd.py pins the row-value-independence property on the
    host platform.
  * Masked attention entries contribute exact zeros (exp(-inf) == 0.0 and
    0.0 * finite == 0.0), so suffix positions can never perturb prefix
    results at a fixed width.

NaN/Inf is an error state. Set `debug_checks(True)` to validate every op
output (slower); `backward` always validates the loss itself.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NumericFault",
    "GraphError",
    "debug_checks",
    "tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "linear",
    "embedding",
    "slice_rows",
    "slice_cols",
    "reshape",
    "swap01",
    "set_row",
    "layer_norm",
    "causal_attention",
    "gelu",
    "relu",
    "softmax",
    "log_softmax",
    "pick_log_probs",
    "cross_entropy",
    "sum_all",
    "mean_all",
    "backward",
]

_DEBUG_CHECKS = False


class NumericFault(RuntimeError):
    """A sanctioned operation produced a non-finite value."""


class GraphError(ValueError):
    """Contract violation in graph construction or backward invocation."""


def debug_checks(enabled: bool) -> None:
    """Toggle per-op finite-value validation (off by default for speed)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class Tensor:
    """A node in the computation graph.

    `data` is always a float64 ndarray. `grad` is populated by `backward`
    for nodes with `requires_grad`. Leaf parameters keep their `grad`
    buffer across steps until `zero_grad` clears it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(op={self.op}, shape={self.data.shape}, grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False, op="const")


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd, op: str) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NumericFault(f"non-finite value produced by op '{op}'")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), op=op)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(-_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * s)

    return _make(data, (a,), bwd, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or batched 3-D matrix product on contiguous operands."""
    ad = np.ascontiguousarray(a.data)
    bd = np.ascontiguousarray(b.data)
    data = ad @ bd

    def bwd(g):
        g = np.ascontiguousarray(g)
        if a.requires_grad:
            bt = np.ascontiguousarray(bd.swapaxes(-1, -2))
            a.accumulate(g @ bt)
        if b.requires_grad:
            at = np.ascontiguousarray(ad.swapaxes(-1, -2))
            b.accumulate(at @ g)

    return _make(data, (a, b), bwd, "matmul")


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Fused x @ w + bias for 2-D x; bias is 1-D over the output features."""
    xd = np.ascontiguousarray(x.data)
    data = xd @ w.data + bias.data

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x.accumulate(g @ np.ascontiguousarray(w.data.T))
        if w.requires_grad:
            w.accumulate(np.ascontiguousarray(xd.T) @ g)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    return _make(data, (x, w, bias), bwd, "linear")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table.accumulate(gt)

    return _make(data, (table,), bwd, "embedding")


def slice_rows(a: Tensor, i0: int, i1: int) -> Tensor:
    data = a.data[i0:i1].copy()

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[i0:i1] = g
            a.accumulate(ga)

    return _make(data, (a,), bwd, "slice_rows")


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    data = np.ascontiguousarray(a.data[..., j0:j1])

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[..., j0:j1] = g
            a.accumulate(ga)

    return _make(data, (a,), bwd, "slice_cols")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    data = np.ascontiguousarray(a.data).reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), bwd, "reshape")


def swap01(a: Tensor) -> Tensor:
    data = np.ascontiguousarray(a.data.swapaxes(0, 1))

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.ascontiguousarray(g.swapaxes(0, 1)))

    return _make(data, (a,), bwd, "swap01")


def set_row(a: Tensor, idx: int, row: Tensor) -> Tensor:
    """Replace row `idx` of `a` with `row`; gradients split accordingly."""
    if row.data.shape != a.data.shape[1:]:
        raise GraphError(
            f"set_row shape mismatch: row {row.data.shape} vs {a.data.shape[1:]}"
        )
    data = a.data.copy()
    data[idx] = row.data

    def bwd(g):
        if a.requires_grad:
            ga = g.copy()
            ga[idx] = 0.0
            a.accumulate(ga)
        if row.requires_grad:
            row.accumulate(g[idx])

    return _make(data, (a, row), bwd, "set_row")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = np.ascontiguousarray(x.data)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def bwd(g):
        n = xd.shape[-1]
        if gamma.requires_grad:
            gamma.accumulate(_unbroadcast(g * xhat, gamma.data.shape))
        if beta.requires_grad:
            beta.accumulate(_unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            gx_hat = g * gamma.data
            gv = (gx_hat * xhat).sum(axis=-1, keepdims=True)
            gm = gx_hat.sum(axis=-1, keepdims=True)
            x.accumulate(inv * (gx_hat - (xhat * gv + gm) / n))

    return _make(data, (x, gamma, beta), bwd, "layer_norm")


_NEG_INF_MASKS: dict = {}


def _neg_inf_mask(T: int) -> np.ndarray:
    """Additive causal mask: 0 on/below the diagonal, -inf above."""
    m = _NEG_INF_MASKS.get(T)
    if m is None:
        m = np.where(np.tril(np.ones((T, T), dtype=bool)), 0.0, -np.inf)
        _NEG_INF_MASKS[T] = m
    return m


def causal_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Masked softmax attention over full fixed width.

    q, k, v: (heads, T, head_dim). Position t attends to positions <= t.
    Masked entries are exact -inf before exp and exact 0 after, so values
    at positions > t cannot perturb row t (see module determinism policy).
    """
    H, T, dh = q.data.shape
    sc = 1.0 / math.sqrt(dh)
    qd = np.ascontiguousarray(q.data)
    kd = np.ascontiguousarray(k.data)
    vd = np.ascontiguousarray(v.data)
    s = (qd @ np.ascontiguousarray(kd.swapaxes(1, 2))) * sc
    s += _neg_inf_mask(T)  # finite + -inf == -inf exactly
    rm = s.max(axis=-1, keepdims=True)
    e = np.exp(s - rm)
    den = e.sum(axis=-1, keepdims=True)
    w = e / den
    data = w @ vd

    def bwd(g):
        g = np.ascontiguousarray(g)
        wt = np.ascontiguousarray(w.swapaxes(1, 2))
        if v.requires_grad:
            v.accumulate(wt @ g)
        gw = g @ np.ascontiguousarray(vd.swapaxes(1, 2))
        tmp = (gw * w).sum(axis=-1, keepdims=True)
        gs = w * (gw - tmp)  # masked entries have w == 0 -> gs == 0
        if q.requires_grad:
            q.accumulate((gs @ kd) * sc)
        if k.requires_grad:
            gst = np.ascontiguousarray(gs.swapaxes(1, 2))
            k.accumulate((gst @ qd) * sc)

    return _make(data, (q, k, v), bwd, "causal_attention")


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * (x.data > 0.0))

    return _make(data, (x,), bwd, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    x2 = xd * xd
    inner = _GELU_C * (xd + 0.044715 * (x2 * xd))
    th = np.tanh(inner)
    data = 0.5 * xd * (1.0 + th)

    def bwd(g):
        if x.requires_grad:
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
            dx = 0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * d_inner
            x.accumulate(g * dx)

    return _make(data, (x,), bwd, "gelu")


def softmax(x: Tensor) -> Tensor:
    xd = np.ascontiguousarray(x.data)
    rm = xd.max(axis=-1, keepdims=True)
    e = np.exp(xd - rm)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            tmp = (g * data).sum(axis=-1, keepdims=True)
            x.accumulate(data * (g - tmp))

    return _make(data, (x,), bwd, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    xd = np.ascontiguousarray(x.data)
    rm = xd.max(axis=-1, keepdims=True)
    sh = xd - rm
    lse = np.log(np.exp(sh).sum(axis=-1, keepdims=True))
    data = sh - lse

    def bwd(g):
        if x.requires_grad:
            sm = np.exp(data)
            x.accumulate(g - sm * g.sum(axis=-1, keepdims=True))

    return _make(data, (x,), bwd, "log_softmax")


def pick_log_probs(logp: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather logp[rows, cols] as a vector (used for NTP terms)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    data = logp.data[rows, cols]

    def bwd(g):
        if logp.requires_grad:
            gl = np.zeros_like(logp.data)
            np.add.at(gl, (rows, cols), g)
            logp.accumulate(gl)

    return _make(data, (logp,), bwd, "pick_log_probs")


def cross_entropy(logits: Tensor, rows: np.ndarray, targets: np.ndarray) -> Tensor:
    """Summed cross-entropy -sum log p(targets) at the given logit rows.

    Fused logsumexp formulation; the test suite checks it agrees with the
    log_softmax + negative-log-likelihood composition to 1e-9.
    """
    rows = np.asarray(rows, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    ld = np.ascontiguousarray(logits.data[rows])
    rm = ld.max(axis=-1, keepdims=True)
    sh = ld - rm
    lse = np.log(np.exp(sh).sum(axis=-1)) + rm[:, 0]
    picked = ld[np.arange(len(rows)), targets]
    data = np.array((lse - picked).sum())

    def bwd(g):
        if logits.requires_grad:
            sm = np.exp(sh - np.log(np.exp(sh).sum(axis=-1, keepdims=True)))
            sm[np.arange(len(rows)), targets] -= 1.0
            gl = np.zeros_like(logits.data)
            np.add.at(gl, rows, g * sm)
            logits.accumulate(gl)

    return _make(data, (logits,), bwd, "cross_entropy")


def sum_all(x: Tensor) -> Tensor:
    data = np.array(np.ascontiguousarray(x.data).sum())

    def bwd(g):
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(g)))

    return _make(data, (x,), bwd, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.array(np.ascontiguousarray(x.data).sum() / n)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(g) / n))

    return _make(data, (x,), bwd, "mean_all")


def _topo_order(root: Tensor) -> list:
    order: list = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable requires_grad tensor.

    `loss` must be a scalar produced by ops from this module.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericFault(f"loss is non-finite (op '{loss.op}')")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; nothing to differentiate")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        g = node.grad
        if g is None:
            continue
        if _DEBUG_CHECKS and not np.all(np.isfinite(g)):
            raise NumericFault(f"non-finite gradient flowing into op '{node.op}'")
        node._backward(g)
        if node._parents:
            # free transient gradient storage on interior nodes
            node.grad = None
