"""Minimal dense real-tensor engine with reverse-mode automatic differentiation.

Every value is a 2-D float64 grid (rows x cols). A Node records the operation
that produced it and ordered references to its inputs; backward() performs a
deterministic reverse topological sweep and accumulates exact gradients into
every reachable node that requires them. Graphs are rebuilt per batch
(define-by-run); the caller zeroes gradients between optimizer steps.

Also hosts the Adam optimizer and the weight-initialization helpers used by
all the networks in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalAbort, ShapeError


def _as_grid(value) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ShapeError(f"grids are 2-D, got shape {a.shape}")
    return a


class Node:
    """Differentiable real grid with recorded operation lineage.

    grad has the same shape as value and starts at zero; repeated backward
    calls accumulate. parents is an ordered tuple, which makes the reverse
    sweep (and therefore the accumulated floats) bit-identical across runs
    of the same graph.
    """

    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "name", "_backward")

    def __init__(self, value, op="leaf", parents=(), requires_grad=True, name=None):
        self.value = _as_grid(value)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def label(self) -> str:
        return self.name if self.name is not None else self.op

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, name={self.name!r})"

    # small conveniences for loss arithmetic
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def backward(self):
        backward(self)


def constant(value, name=None) -> Node:
    """Leaf that takes part in the graph but receives no gradient."""
    return Node(value, op="const", requires_grad=False, name=name)


def parameter(value, name=None) -> Node:
    return Node(value, op="param", requires_grad=True, name=name)


def _child(value, op, parents) -> Node:
    req = any(p.requires_grad for p in parents)
    return Node(value, op=op, parents=parents, requires_grad=req)


def _check_same_shape(op, a: Node, b: Node):
    if a.value.shape != b.value.shape:
        raise ShapeError(
            f"{op}: operand {a.label()} has shape {a.value.shape}, "
            f"operand {b.label()} has shape {b.value.shape}"
        )


# ---------------------------------------------------------------------------
# elementwise and structural operations
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    _check_same_shape("add", a, b)
    out = _child(a.value + b.value, "add", (a, b))

    def bwd():
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad += out.grad

    out._backward = bwd
    return out


def sub(a: Node, b: Node) -> Node:
    _check_same_shape("sub", a, b)
    out = _child(a.value - b.value, "sub", (a, b))

    def bwd():
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad -= out.grad

    out._backward = bwd
    return out


def mul(a: Node, b: Node) -> Node:
    """Elementwise product; one operand may be 1x1 (broadcast scalar)."""
    if a.value.shape != b.value.shape and a.value.shape != (1, 1) and b.value.shape != (1, 1):
        _check_same_shape("mul", a, b)
    out = _child(a.value * b.value, "mul", (a, b))

    def bwd():
        if a.requires_grad:
            g = b.value * out.grad
            a.grad += g.sum() if a.value.shape == (1, 1) else g
        if b.requires_grad:
            g = a.value * out.grad
            b.grad += g.sum() if b.value.shape == (1, 1) else g

    out._backward = bwd
    return out


def affine_const(x: Node, a: float, b: float = 0.0) -> Node:
    """a*x + b with python-float coefficients."""
    out = _child(a * x.value + b, "affine_const", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += a * out.grad

    out._backward = bwd
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: {a.label()} has shape {a.value.shape}, "
            f"{b.label()} has shape {b.value.shape}"
        )
    out = _child(a.value @ b.value, "matmul", (a, b))

    def bwd():
        if a.requires_grad:
            a.grad += out.grad @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ out.grad

    out._backward = bwd
    return out


def linear(W: Node, b: Node, x: Node) -> Node:
    """W @ x + b with the bias column broadcast over the batch columns."""
    m, n = W.value.shape
    if x.value.shape[0] != n:
        raise ShapeError(
            f"linear: weight {W.label()} is {W.value.shape} but input "
            f"{x.label()} is {x.value.shape}"
        )
    if b.value.shape != (m, 1):
        raise ShapeError(
            f"linear: bias {b.label()} is {b.value.shape}, expected ({m}, 1) "
            f"to match weight {W.label()}"
        )
    out = _child(W.value @ x.value + b.value, "linear", (W, b, x))

    def bwd():
        g = out.grad
        if W.requires_grad:
            W.grad += g @ x.value.T
        if b.requires_grad:
            b.grad += g.sum(axis=1, keepdims=True)
        if x.requires_grad:
            x.grad += W.value.T @ g

    out._backward = bwd
    return out


def powc(x: Node, p: float) -> Node:
    out = _child(x.value ** p, "powc", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += p * x.value ** (p - 1.0) * out.grad

    out._backward = bwd
    return out


def log(x: Node) -> Node:
    out = _child(np.log(x.value), "log", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += out.grad / x.value

    out._backward = bwd
    return out


def clamp(x: Node, lo: float, hi: float) -> Node:
    """Clip to [lo, hi]; gradient passes through only where x is inside."""
    out = _child(np.clip(x.value, lo, hi), "clamp", (x,))
    inside = (x.value >= lo) & (x.value <= hi)

    def bwd():
        if x.requires_grad:
            x.grad += inside * out.grad

    out._backward = bwd
    return out


def concat_rows(parts) -> Node:
    parts = tuple(parts)
    cols = parts[0].value.shape[1]
    for p in parts:
        if p.value.shape[1] != cols:
            raise ShapeError(
                f"concat_rows: {p.label()} has {p.value.shape[1]} cols, expected {cols}"
            )
    out = _child(np.concatenate([p.value for p in parts], axis=0), "concat_rows", parts)

    def bwd():
        r = 0
        for p in parts:
            n = p.value.shape[0]
            if p.requires_grad:
                p.grad += out.grad[r:r + n]
            r += n

    out._backward = bwd
    return out


def slice_rows(x: Node, r0: int, r1: int) -> Node:
    out = _child(x.value[r0:r1], "slice_rows", (x,))

    def bwd():
        if x.requires_grad:
            x.grad[r0:r1] += out.grad

    out._backward = bwd
    return out


def select_cols(x: Node, idx) -> Node:
    """Column subset by (unique) integer indices."""
    idx = np.asarray(idx, dtype=np.intp)
    out = _child(x.value[:, idx], "select_cols", (x,))

    def bwd():
        if x.requires_grad:
            x.grad[:, idx] += out.grad

    out._backward = bwd
    return out


def pick_rows(x: Node, row_idx) -> Node:
    """out[0, j] = x[row_idx[j], j]; one entry per column."""
    row_idx = np.asarray(row_idx, dtype=np.intp)
    cols = np.arange(x.value.shape[1])
    if row_idx.shape != cols.shape:
        raise ShapeError(
            f"pick_rows: index length {row_idx.shape[0]} != cols {cols.shape[0]} of {x.label()}"
        )
    out = _child(x.value[row_idx, cols].reshape(1, -1), "pick_rows", (x,))

    def bwd():
        if x.requires_grad:
            x.grad[row_idx, cols] += out.grad[0]

    out._backward = bwd
    return out


def fold_slots(x: Node, n_slots: int) -> Node:
    """Regroup (R, B*n) with columns ordered slot-within-scenario into
    (R*n, B): out[r*n + t, b] = x[r, b*n + t].

    Row block [r*n, (r+1)*n) of the output is row r of each scenario's
    R x n block, i.e. the row-major flattening used by the radar receiver.
    """
    r, bn = x.value.shape
    if bn % n_slots != 0:
        raise ShapeError(f"fold_slots: {bn} cols not divisible by {n_slots} slots")
    b = bn // n_slots
    out_val = x.value.reshape(r, b, n_slots).transpose(0, 2, 1).reshape(r * n_slots, b)
    out = _child(out_val, "fold_slots", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += out.grad.reshape(r, n_slots, b).transpose(0, 2, 1).reshape(r, bn)

    out._backward = bwd
    return out


def reshape(x: Node, rows: int, cols: int) -> Node:
    """Row-major reshape to (rows, cols)."""
    if rows * cols != x.value.size:
        raise ShapeError(
            f"reshape: cannot view {x.label()} of shape {x.value.shape} as ({rows}, {cols})"
        )
    out = _child(x.value.reshape(rows, cols), "reshape", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += out.grad.reshape(x.value.shape)

    out._backward = bwd
    return out


def broadcast_rows(x: Node, rows: int) -> Node:
    """Tile a 1 x C row vector down to rows x C."""
    if x.value.shape[0] != 1:
        raise ShapeError(f"broadcast_rows: {x.label()} has shape {x.value.shape}, need 1 row")
    out = _child(np.broadcast_to(x.value, (rows, x.value.shape[1])).copy(),
                 "broadcast_rows", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += out.grad.sum(axis=0, keepdims=True)

    out._backward = bwd
    return out


def sum_all(x: Node) -> Node:
    out = _child(x.value.sum(), "sum_all", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += out.grad[0, 0]

    out._backward = bwd
    return out


def mean_all(x: Node) -> Node:
    n = x.value.size
    out = _child(x.value.sum() / n, "mean_all", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += out.grad[0, 0] / n

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Node) -> Node:
    out = _child(np.maximum(x.value, 0.0), "relu", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += (x.value > 0.0) * out.grad

    out._backward = bwd
    return out


def sigmoid(x: Node) -> Node:
    # split by sign for overflow-free exp
    v = x.value
    out_val = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                       np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = _child(out_val, "sigmoid", (x,))

    def bwd():
        if x.requires_grad:
            s = out.value
            x.grad += s * (1.0 - s) * out.grad

    out._backward = bwd
    return out


def tanh(x: Node) -> Node:
    out = _child(np.tanh(x.value), "tanh", (x,))

    def bwd():
        if x.requires_grad:
            x.grad += (1.0 - out.value ** 2) * out.grad

    out._backward = bwd
    return out


def softmax_cols(x: Node) -> Node:
    """Softmax over each column; columns sum to 1."""
    z = x.value - x.value.max(axis=0, keepdims=True)
    e = np.exp(z)
    out = _child(e / e.sum(axis=0, keepdims=True), "softmax_cols", (x,))

    def bwd():
        if x.requires_grad:
            y = out.value
            g = out.grad
            x.grad += y * (g - (g * y).sum(axis=0, keepdims=True))

    out._backward = bwd
    return out


def log_softmax_cols(x: Node) -> Node:
    """logits - log-sum-exp per column (the stable log of softmax_cols)."""
    z = x.value - x.value.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0, keepdims=True))
    out = _child(z - lse, "log_softmax_cols", (x,))

    def bwd():
        if x.requires_grad:
            g = out.grad
            x.grad += g - np.exp(out.value) * g.sum(axis=0, keepdims=True)

    out._backward = bwd
    return out


ACTIVATIONS = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax-cols": softmax_cols,
    "linear": lambda x: x,
}


def activation(kind: str, x: Node) -> Node:
    """Apply one of relu|sigmoid|tanh|softmax-cols|linear."""
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def _topo_order(root: Node):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        # push parents in reverse so they are visited in recorded order
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node):
    """Reverse sweep from a scalar root; accumulates into reachable grads."""
    if root.value.shape != (1, 1):
        raise ShapeError(f"backward: root must be 1x1, got {root.value.shape}")
    order = _topo_order(root)
    root.grad += 1.0
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward()


def zero_grads(nodes):
    for n in nodes:
        n.grad[...] = 0.0


# ---------------------------------------------------------------------------
# Adam optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam moments; t increases by one per step."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Node, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(m=np.zeros_like(param.value), v=np.zeros_like(param.value),
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param: Node, state: AdamState, lr: float):
    """One Adam update with bias correction, in place."""
    g = param.grad
    if not np.isfinite(g).all():
        raise NumericalAbort(f"non-finite gradient for parameter {param.label()}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# initialization and plain-MLP plumbing
# ---------------------------------------------------------------------------

def glorot_uniform(rows: int, cols: int, rng: np.random.Generator,
                   col_scale=None) -> np.ndarray:
    """Uniform in +-sqrt(6/(fan_in+fan_out)).

    col_scale optionally divides each input column's fan-in weights, which
    keeps first-layer pre-activations O(1) when input features arrive at a
    known physical scale far from unity.
    """
    bound = np.sqrt(6.0 / (rows + cols))
    w = rng.uniform(-bound, bound, size=(rows, cols))
    if col_scale is not None:
        w /= np.asarray(col_scale, dtype=np.float64).reshape(1, -1)
    return w


def init_mlp(widths, rng: np.random.Generator, name: str,
             input_scale=None) -> list[tuple[Node, Node]]:
    """Weight/bias Node pairs for consecutive widths; biases start at zero."""
    layers = []
    for i in range(len(widths) - 1):
        n_in, n_out = widths[i], widths[i + 1]
        scale = input_scale if i == 0 else None
        W = parameter(glorot_uniform(n_out, n_in, rng, col_scale=scale),
                      name=f"{name}.W{i}")
        b = parameter(np.zeros((n_out, 1)), name=f"{name}.b{i}")
        layers.append((W, b))
    return layers


def run_mlp(layers, activations, x: Node) -> Node:
    """Chain linear layers with the given per-layer activation kinds."""
    if len(layers) != len(activations):
        raise ShapeError(
            f"run_mlp: {len(layers)} layers but {len(activations)} activations"
        )
    h = x
    for (W, b), kind in zip(layers, activations):
        h = activation(kind, linear(W, b, h))
    return h
