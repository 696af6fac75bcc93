"""Tape-based reverse-mode differentiation over dense float64 arrays.

Values live on a :class:`Tape` as numpy arrays; every operation returns an
integer node id. Trainable leaves are :class:`Parameter` objects whose
``grad`` receives accumulated gradients after :meth:`Tape.backward`.

A node may carry a per-row gradient scale (see
:meth:`Tape.set_row_gradient_scale`). During the backward pass the upstream
gradient arriving at that node is multiplied row-wise by the scale before it
is handed to the node's inputs; the forward value is untouched.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.linalg import lapack
from threadpoolctl import threadpool_limits

COND_LIMIT = 1e12
REFINE_STEPS = 2


class ShapeError(ValueError):
    pass


class SingularSystem(ArithmeticError):
    """Raised by ``linear-solve`` when the system is (numerically) singular."""

    def __init__(self, message: str, cond: float = float("inf"), batch_index: int | None = None):
        super().__init__(message)
        self.cond = cond
        self.batch_index = batch_index


@dataclass
class Parameter:
    id: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict
    row_scale: np.ndarray | None = None
    param: Parameter | None = None
    cache: dict = field(default_factory=dict)


@contextlib.contextmanager
def single_threaded():
    """Pin BLAS/LAPACK to one thread so results are bitwise reproducible."""
    with threadpool_limits(limits=1):
        yield


def _rows(x: np.ndarray) -> int:
    return x.shape[0] if x.ndim else 1


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only row-wise broadcasting is supported: (n, m) against (m,) or (1, m)
    if g.shape == shape:
        return g
    return g.sum(axis=0).reshape(shape)


def _check_binary(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    if a.ndim == 2 and (b.shape == (a.shape[1],) or b.shape == (1, a.shape[1])):
        return
    raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# forward rules: (values, attrs, cache) -> output
# backward rules: (node, upstream, input values) -> tuple of input gradients
# ---------------------------------------------------------------------------

def _fwd_add(v, attrs, cache):
    _check_binary("add", v[0], v[1])
    return v[0] + v[1]


def _bwd_add(node, g, v):
    return g, _unbroadcast(g, v[1].shape)


def _fwd_sub(v, attrs, cache):
    _check_binary("sub", v[0], v[1])
    return v[0] - v[1]


def _bwd_sub(node, g, v):
    return g, -_unbroadcast(g, v[1].shape)


def _fwd_mul(v, attrs, cache):
    _check_binary("mul", v[0], v[1])
    return v[0] * v[1]


def _bwd_mul(node, g, v):
    return g * v[1], _unbroadcast(g * v[0], v[1].shape)


def _fwd_scalar_mul(v, attrs, cache):
    return attrs["scalar"] * v[0]


def _bwd_scalar_mul(node, g, v):
    return (node.attrs["scalar"] * g,)


def _fwd_matmul(v, attrs, cache):
    a, b = v
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape[1]}≠{b.shape[0]} ({a.shape} @ {b.shape})")
    return a @ b


def _bwd_matmul(node, g, v):
    a, b = v
    return g @ b.T, a.T @ g


def _fwd_exp(v, attrs, cache):
    return np.exp(v[0])


def _bwd_exp(node, g, v):
    return (g * node.value,)


def _fwd_log(v, attrs, cache):
    if np.any(v[0] <= 0):
        raise FloatingPointError("log: non-positive input")
    return np.log(v[0])


def _bwd_log(node, g, v):
    return (g / v[0],)


def _fwd_negate(v, attrs, cache):
    return -v[0]


def _bwd_negate(node, g, v):
    return (-g,)


def _fwd_row_sum(v, attrs, cache):
    x = v[0]
    if x.ndim != 2:
        raise ShapeError(f"row-sum: expected 2-d input, got {x.shape}")
    return x.sum(axis=1, keepdims=True)


def _bwd_row_sum(node, g, v):
    return (np.broadcast_to(g, v[0].shape).copy(),)


def _fwd_sum(v, attrs, cache):
    return np.asarray(v[0].sum())


def _bwd_sum(node, g, v):
    return (np.full(v[0].shape, float(g)),)


def _fwd_row_normalize(v, attrs, cache):
    x = v[0]
    if x.ndim != 2:
        raise ShapeError(f"row-normalize: expected 2-d input, got {x.shape}")
    s = x.sum(axis=1, keepdims=True)
    if np.any(s == 0):
        raise FloatingPointError("row-normalize: zero row sum")
    cache["s"] = s
    return x / s


def _bwd_row_normalize(node, g, v):
    y, s = node.value, node.cache["s"]
    return ((g - (g * y).sum(axis=1, keepdims=True)) / s,)


def _fwd_softmax(v, attrs, cache):
    x = v[0]
    if x.ndim != 2:
        raise ShapeError(f"softmax: expected 2-d input, got {x.shape}")
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _bwd_softmax(node, g, v):
    y = node.value
    return (y * (g - (g * y).sum(axis=1, keepdims=True)),)


def _fwd_sqdist(v, attrs, cache):
    a, b, sigma = v
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise-scaled-sqdist: feature shapes {a.shape} and {b.shape} disagree")
    sigma = sigma.reshape(-1)
    if sigma.shape[0] != a.shape[1]:
        raise ShapeError(
            f"pairwise-scaled-sqdist: bandwidth length {sigma.shape[0]} ≠ feature dim {a.shape[1]}")
    if np.any(sigma <= 0):
        raise FloatingPointError("pairwise-scaled-sqdist: bandwidth must be positive")
    w = 0.5 / sigma ** 2
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,k->ij", diff * diff, w)


def _bwd_sqdist(node, g, v):
    a, b, sigma = v
    s = sigma.reshape(-1)
    inv2 = 1.0 / s ** 2
    gr = g.sum(axis=1)
    gc = g.sum(axis=0)
    ga = (gr[:, None] * a - g @ b) * inv2
    gb = (gc[:, None] * b - g.T @ a) * inv2
    diff = a[:, None, :] - b[None, :, :]
    weighted = np.einsum("ij,ijk->k", g, diff * diff)
    gs = -weighted / s ** 3
    return ga, gb, gs.reshape(sigma.shape)


def _fwd_linear_solve(v, attrs, cache):
    a, b = v
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"linear-solve: matrix must be square, got {a.shape}")
    if b.ndim != 2 or b.shape[0] != a.shape[0]:
        raise ShapeError(f"linear-solve: right-hand side {b.shape} does not match matrix {a.shape}")
    batch_index = attrs.get("batch_index")
    if not np.all(np.isfinite(a)):
        raise SingularSystem("linear-solve: non-finite matrix", batch_index=batch_index)
    lu, piv, info = lapack.dgetrf(a)
    if info > 0:
        raise SingularSystem("linear-solve: exactly singular matrix", batch_index=batch_index)
    anorm = np.abs(a).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > COND_LIMIT:
        raise SingularSystem(
            f"linear-solve: condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e}",
            cond=cond, batch_index=batch_index)
    cache["lu"] = (lu, piv)
    cache["cond"] = cond
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    # iterative refinement with extended-precision residuals: recovers the
    # accuracy LU loses to cancellation when cond(A) is large
    a_ext = a.astype(np.longdouble)
    for _ in range(REFINE_STEPS):
        r = (b.astype(np.longdouble) - a_ext @ x.astype(np.longdouble)).astype(np.float64)
        x = x + scipy.linalg.lu_solve((lu, piv), r, check_finite=False)
    return x


def _bwd_linear_solve(node, g, v):
    # X = A^{-1} B;  gB = A^{-T} g,  gA = -gB X^T
    gb = scipy.linalg.lu_solve(node.cache["lu"], g, trans=1, check_finite=False)
    return -gb @ node.value.T, gb


def _fwd_l1_norm(v, attrs, cache):
    return np.asarray(np.abs(v[0]).sum())


def _bwd_l1_norm(node, g, v):
    return (float(g) * np.sign(v[0]),)


def _fwd_cross_entropy(v, attrs, cache):
    logits, onehot = v
    if logits.shape != onehot.shape or logits.ndim != 2:
        raise ShapeError(f"cross-entropy: logits {logits.shape} vs targets {onehot.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    cache["p"] = np.exp(logp)
    return np.asarray(-(onehot * logp).sum() / logits.shape[0])


def _bwd_cross_entropy(node, g, v):
    logits, onehot = v
    n = logits.shape[0]
    p = node.cache["p"]
    t = onehot.sum(axis=1, keepdims=True)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(g) * (p * t - onehot) / n, -float(g) * logp / n


def _fwd_sigmoid(v, attrs, cache):
    x = v[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bwd_sigmoid(node, g, v):
    y = node.value
    return (g * y * (1.0 - y),)


def _fwd_relu(v, attrs, cache):
    return np.maximum(v[0], 0.0)


def _bwd_relu(node, g, v):
    return (g * (v[0] > 0),)


def _fwd_log_sigmoid(v, attrs, cache):
    x = v[0]
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def _bwd_log_sigmoid(node, g, v):
    # d/dx log sigmoid(x) = 1 - sigmoid(x) = sigmoid(-x)
    return (g * _fwd_sigmoid([-v[0]], {}, {}),)


def _fwd_clip(v, attrs, cache):
    return np.clip(v[0], attrs["lo"], attrs["hi"])


def _bwd_clip(node, g, v):
    x = v[0]
    return (g * ((x >= node.attrs["lo"]) & (x <= node.attrs["hi"])),)


def _fwd_entropy(v, attrs, cache):
    p = v[0]
    if p.ndim != 2:
        raise ShapeError(f"entropy-per-row: expected 2-d input, got {p.shape}")
    if np.any(p < 0):
        raise FloatingPointError("entropy-per-row: negative probability")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -plogp.sum(axis=1, keepdims=True)


def _bwd_entropy(node, g, v):
    p = v[0]
    with np.errstate(divide="ignore"):
        d = -(np.log(p) + 1.0)
    return (g * d,)


def _fwd_concat_rows(v, attrs, cache):
    cols = {x.shape[1:] for x in v}
    if len(cols) != 1:
        raise ShapeError(f"concat-rows: trailing shapes differ {[x.shape for x in v]}")
    return np.concatenate(v, axis=0)


def _bwd_concat_rows(node, g, v):
    edges = np.cumsum([x.shape[0] for x in v])[:-1]
    return tuple(np.split(g, edges, axis=0))


def _fwd_slice_rows(v, attrs, cache):
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start <= stop <= v[0].shape[0]:
        raise ShapeError(f"slice-rows: [{start}:{stop}] out of range for {v[0].shape}")
    return v[0][start:stop].copy()


def _bwd_slice_rows(node, g, v):
    out = np.zeros_like(v[0])
    out[node.attrs["start"]:node.attrs["stop"]] = g
    return (out,)


def _fwd_transpose(v, attrs, cache):
    if v[0].ndim != 2:
        raise ShapeError(f"transpose: expected 2-d input, got {v[0].shape}")
    return v[0].T.copy()


def _bwd_transpose(node, g, v):
    return (g.T,)


def _fwd_reshape(v, attrs, cache):
    return v[0].reshape(attrs["shape"])


def _bwd_reshape(node, g, v):
    return (g.reshape(v[0].shape),)


# --- image ops used by the conv generator (internal, NCHW layout) ---------

def _fwd_conv2d(v, attrs, cache):
    x, w = v
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} and kernel {w.shape} disagree")
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    oh, ow = h - kh + 1, wd - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    out = np.zeros((n, k, oh, ow))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("nchw,kc->nkhw", x[:, :, i:i + oh, j:j + ow], w[:, :, i, j], optimize=True)
    return out


def _bwd_conv2d(node, g, v):
    x, w = v
    _, _, kh, kw = w.shape
    oh, ow = g.shape[2], g.shape[3]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i:i + oh, j:j + ow]
            gw[:, :, i, j] = np.einsum("nkhw,nchw->kc", g, patch, optimize=True)
            gx[:, :, i:i + oh, j:j + ow] += np.einsum("nkhw,kc->nchw", g, w[:, :, i, j], optimize=True)
    return gx, gw


def _fwd_add_channel_bias(v, attrs, cache):
    x, b = v
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(f"add-channel-bias: input {x.shape} and bias {b.shape} disagree")
    return x + b[None, :, None, None]


def _bwd_add_channel_bias(node, g, v):
    return g, g.sum(axis=(0, 2, 3))


def _fwd_maxpool2(v, attrs, cache):
    x = v[0]
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {x.shape}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    cache["idx"] = idx
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]


def _bwd_maxpool2(node, g, v):
    x = v[0]
    n, c, h, w = x.shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, node.cache["idx"][..., None], g[..., None], axis=-1)
    return (blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)


def _fwd_batchnorm(v, attrs, cache):
    # normalizes over every axis except 1 (features / channels)
    x = v[0]
    axes = tuple(i for i in range(x.ndim) if i != 1)
    if attrs.get("mean") is not None:
        mean, var = attrs["mean"], attrs["var"]
    else:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    shape = [1] * x.ndim
    shape[1] = -1
    inv = 1.0 / np.sqrt(var + attrs.get("eps", 1e-5))
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    cache.update(mean=mean, var=var, inv=inv.reshape(shape), xhat=xhat, axes=axes)
    return xhat


def _bwd_batchnorm(node, g, v):
    c = node.cache
    if node.attrs.get("mean") is not None:
        return (g * c["inv"],)
    axes = c["axes"]
    xhat = c["xhat"]
    gx = g - g.mean(axis=axes, keepdims=True) - xhat * (g * xhat).mean(axis=axes, keepdims=True)
    return (gx * c["inv"],)


FORWARD: dict[str, Callable] = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "scalar-mul": _fwd_scalar_mul,
    "matmul": _fwd_matmul,
    "exp": _fwd_exp,
    "log": _fwd_log,
    "negate": _fwd_negate,
    "row-sum": _fwd_row_sum,
    "sum": _fwd_sum,
    "row-normalize": _fwd_row_normalize,
    "softmax": _fwd_softmax,
    "pairwise-scaled-sqdist": _fwd_sqdist,
    "linear-solve": _fwd_linear_solve,
    "l1-norm": _fwd_l1_norm,
    "cross-entropy": _fwd_cross_entropy,
    "sigmoid": _fwd_sigmoid,
    "relu": _fwd_relu,
    "log-sigmoid": _fwd_log_sigmoid,
    "clip": _fwd_clip,
    "entropy-per-row": _fwd_entropy,
    "concat-rows": _fwd_concat_rows,
    "slice-rows": _fwd_slice_rows,
    "transpose": _fwd_transpose,
    "reshape": _fwd_reshape,
    "conv2d": _fwd_conv2d,
    "add-channel-bias": _fwd_add_channel_bias,
    "maxpool2": _fwd_maxpool2,
    "batchnorm": _fwd_batchnorm,
}

BACKWARD: dict[str, Callable] = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "scalar-mul": _bwd_scalar_mul,
    "matmul": _bwd_matmul,
    "exp": _bwd_exp,
    "log": _bwd_log,
    "negate": _bwd_negate,
    "row-sum": _bwd_row_sum,
    "sum": _bwd_sum,
    "row-normalize": _bwd_row_normalize,
    "softmax": _bwd_softmax,
    "pairwise-scaled-sqdist": _bwd_sqdist,
    "linear-solve": _bwd_linear_solve,
    "l1-norm": _bwd_l1_norm,
    "cross-entropy": _bwd_cross_entropy,
    "sigmoid": _bwd_sigmoid,
    "relu": _bwd_relu,
    "log-sigmoid": _bwd_log_sigmoid,
    "clip": _bwd_clip,
    "entropy-per-row": _bwd_entropy,
    "concat-rows": _bwd_concat_rows,
    "slice-rows": _bwd_slice_rows,
    "transpose": _bwd_transpose,
    "reshape": _bwd_reshape,
    "conv2d": _bwd_conv2d,
    "add-channel-bias": _bwd_add_channel_bias,
    "maxpool2": _bwd_maxpool2,
    "batchnorm": _bwd_batchnorm,
}

OP_KINDS = tuple(FORWARD)


class Tape:
    """Records operations in execution order and runs the backward sweep."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.nodes)

    # leaves -----------------------------------------------------------------
    def constant(self, value) -> int:
        value = np.array(value, dtype=np.float64)
        self.nodes.append(Node("constant", (), value, {}))
        return len(self.nodes) - 1

    def param(self, p: Parameter) -> int:
        self.nodes.append(Node("parameter", (), p.value, {}, param=p))
        return len(self.nodes) - 1

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def shape(self, node_id: int) -> tuple[int, ...]:
        return self.nodes[node_id].value.shape

    # recording --------------------------------------------------------------
    def record(self, kind: str, inputs, **attrs) -> int:
        if kind not in FORWARD:
            raise ValueError(f"unknown op kind {kind!r}")
        inputs = tuple(int(i) for i in inputs)
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise KeyError(f"{kind}: input node {i} is not on this tape")
        cache: dict = {}
        value = FORWARD[kind]([self.nodes[i].value for i in inputs], attrs, cache)
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node(kind, inputs, value, attrs, cache=cache))
        return len(self.nodes) - 1

    def set_row_gradient_scale(self, node_id: int, rho) -> None:
        rho = np.asarray(rho, dtype=np.float64).reshape(-1)
        rows = _rows(self.nodes[node_id].value)
        if rho.shape[0] != rows:
            raise ShapeError(f"row gradient scale has length {rho.shape[0]}, node has {rows} rows")
        if np.any(rho < 0) or np.any(rho > 1):
            raise ValueError("row gradient scale values must lie in [0, 1]")
        self.nodes[node_id].row_scale = rho

    # backward ---------------------------------------------------------------
    def backward(self, loss: int, seed_grad: float = 1.0) -> dict[str, np.ndarray]:
        """Backpropagate from a scalar node; returns {parameter id: gradient}.

        Gradients are added into ``Parameter.grad`` and gradients of every
        reached node are kept in ``self.grads``.
        """
        out = self.nodes[loss].value
        if out.size != 1:
            raise ShapeError(f"backward needs a scalar loss, node {loss} has shape {out.shape}")
        grads: dict[int, np.ndarray] = {loss: np.full(out.shape, float(seed_grad))}
        touched: dict[str, Parameter] = {}
        for idx in range(loss, -1, -1):
            g = grads.get(idx)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.row_scale is not None:
                g = g * node.row_scale.reshape((-1,) + (1,) * (g.ndim - 1))
                grads[idx] = g
            if node.param is not None:
                node.param.grad = node.param.grad + g
                touched[node.param.id] = node.param
                continue
            if not node.inputs:
                continue
            in_vals = [self.nodes[i].value for i in node.inputs]
            for i, gi in zip(node.inputs, BACKWARD[node.kind](node, g, in_vals)):
                if gi is None:
                    continue
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = np.array(gi, dtype=np.float64)
        self.grads = grads
        return {pid: p.grad for pid, p in touched.items()}

    def grad(self, node_id: int) -> np.ndarray:
        """Gradient of the last backward's loss w.r.t. a node (zeros if unreached)."""
        g = self.grads.get(node_id)
        return np.zeros_like(self.nodes[node_id].value) if g is None else g

    # convenience wrappers ---------------------------------------------------
    def add(self, a, b): return self.record("add", [a, b])
    def sub(self, a, b): return self.record("sub", [a, b])
    def mul(self, a, b): return self.record("mul", [a, b])
    def scale(self, a, c: float): return self.record("scalar-mul", [a], scalar=float(c))
    def matmul(self, a, b): return self.record("matmul", [a, b])
    def exp(self, a): return self.record("exp", [a])
    def log(self, a): return self.record("log", [a])
    def neg(self, a): return self.record("negate", [a])
    def row_sum(self, a): return self.record("row-sum", [a])
    def sum(self, a): return self.record("sum", [a])
    def row_normalize(self, a): return self.record("row-normalize", [a])
    def softmax(self, a): return self.record("softmax", [a])
    def sigmoid(self, a): return self.record("sigmoid", [a])
    def relu(self, a): return self.record("relu", [a])
    def log_sigmoid(self, a): return self.record("log-sigmoid", [a])
    def l1_norm(self, a): return self.record("l1-norm", [a])
    def entropy(self, p): return self.record("entropy-per-row", [p])
    def transpose(self, a): return self.record("transpose", [a])
    def concat_rows(self, *xs): return self.record("concat-rows", list(xs))

    def clip(self, a, lo: float, hi: float):
        return self.record("clip", [a], lo=lo, hi=hi)

    def slice_rows(self, a, start: int, stop: int):
        return self.record("slice-rows", [a], start=int(start), stop=int(stop))

    def reshape(self, a, shape):
        return self.record("reshape", [a], shape=tuple(shape))

    def sqdist(self, a, b, sigma):
        return self.record("pairwise-scaled-sqdist", [a, b, sigma])

    def solve(self, a, b, batch_index: int | None = None):
        return self.record("linear-solve", [a, b], batch_index=batch_index)

    def cross_entropy(self, logits, onehot):
        return self.record("cross-entropy", [logits, onehot])

    def mean(self, a):
        return self.scale(self.sum(a), 1.0 / self.nodes[a].value.size)


def linear_solve(tape: Tape, a: int, b: int, batch_index: int | None = None) -> int:
    return tape.solve(a, b, batch_index=batch_index)


def backward(tape: Tape, loss: int) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def set_row_gradient_scale(tape: Tape, node_id: int, rho) -> None:
    tape.set_row_gradient_scale(node_id, rho)
