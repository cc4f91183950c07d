"""Expression graphs over 2-D float64 tensors with reverse-mode
differentiation.

Every gradient rule emits graph nodes rather than raw numbers, so
differentiating an expression that already contains gradient nodes produces
valid second derivatives. That property is what lets the gradient-penalty
term (a function of an input gradient) be optimized with plain reverse mode.

Graphs are immutable once built; evaluation state lives in per-call buffers,
so concurrent evaluations of one graph with different bindings are safe.
"""

from __future__ import annotations

import itertools
import struct

import numpy as np

SQRT_SHIFT = 1e-12

_LEAF_KINDS = ("const", "param", "data")
_UID = itertools.count()


class GraphError(Exception):
    """Structural problem: bad shape, missing binding, non-scalar output."""


class NonFiniteError(ArithmeticError):
    """A node produced NaN/Inf during evaluation."""

    def __init__(self, node):
        self.node = node
        label = node.name or f"#{node.uid}"
        super().__init__(f"non-finite values in node {label} (kind={node.kind})")


class Node:
    """One operation (or leaf) in an expression graph. Identity-hashed;
    `value` is set only on const/param leaves (params may be updated in
    place between evaluations)."""

    __slots__ = ("uid", "kind", "parents", "shape", "meta", "name", "value")

    def __init__(self, kind, parents, shape, meta=None, name=None, value=None):
        self.uid = next(_UID)
        self.kind = kind
        self.parents = tuple(parents)
        self.shape = (int(shape[0]), int(shape[1]))
        self.meta = meta
        self.name = name
        self.value = value

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.uid} {self.kind}{label} {self.shape}>"


def _as_tensor(value) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1, 1)
    elif v.ndim == 1:
        v = v.reshape(1, -1)
    if v.ndim != 2:
        raise GraphError(f"tensors are 2-D, got shape {v.shape}")
    return v


# ------------------------------------------------------------------- leaves


def const(value, name: str = None) -> Node:
    v = _as_tensor(value)
    return Node("const", (), v.shape, name=name, value=v)


def param(name: str, value) -> Node:
    v = _as_tensor(value)
    return Node("param", (), v.shape, name=name, value=v)


def data(name: str, shape) -> Node:
    return Node("data", (), shape, name=name)


# ----------------------------------------------------------------- builders


def _broadcast_shape(a: Node, b: Node, what: str):
    (ar, ac), (br, bc) = a.shape, b.shape
    if (ar != br and 1 not in (ar, br)) or (ac != bc and 1 not in (ac, bc)):
        raise GraphError(f"{what}: shapes {a.shape} and {b.shape} do not broadcast")
    return (max(ar, br), max(ac, bc))


def add(a: Node, b: Node) -> Node:
    return Node("add", (a, b), _broadcast_shape(a, b, "add"))


def mul(a: Node, b: Node) -> Node:
    return Node("mul", (a, b), _broadcast_shape(a, b, "mul"))


def sub(a: Node, b: Node) -> Node:
    return add(a, smul(b, -1.0))


def smul(a: Node, c: float) -> Node:
    return Node("smul", (a,), a.shape, meta=float(c))


def matmul(a: Node, b: Node, ta: bool = False, tb: bool = False) -> Node:
    (ar, ac), (br, bc) = a.shape, b.shape
    if ta:
        ar, ac = ac, ar
    if tb:
        br, bc = bc, br
    if ac != br:
        raise GraphError(f"matmul: inner dims {ac} != {br}")
    return Node("matmul", (a, b), (ar, bc), meta=(bool(ta), bool(tb)))


def transpose(a: Node) -> Node:
    return Node("transpose", (a,), (a.shape[1], a.shape[0]))


def leaky_relu(a: Node, alpha: float) -> Node:
    return Node("leaky_relu", (a,), a.shape, meta=float(alpha))


def leaky_mask(a: Node, alpha: float) -> Node:
    """Elementwise derivative of leaky_relu: 1 where a > 0 else alpha.
    Treated as locally constant (zero gradient)."""
    return Node("leaky_mask", (a,), a.shape, meta=float(alpha))


def sigmoid(a: Node) -> Node:
    return Node("sigmoid", (a,), a.shape)


def row_softmax(a: Node) -> Node:
    return Node("row_softmax", (a,), a.shape)


def square(a: Node) -> Node:
    return Node("square", (a,), a.shape)


def sqrt_shift(a: Node) -> Node:
    """sqrt(a + 1e-12); the shift keeps norms differentiable at zero."""
    return Node("sqrt_shift", (a,), a.shape)


def reciprocal(a: Node) -> Node:
    return Node("reciprocal", (a,), a.shape)


def row_sum(a: Node) -> Node:
    return Node("row_sum", (a,), (a.shape[0], 1))


def col_sum(a: Node) -> Node:
    return Node("col_sum", (a,), (1, a.shape[1]))


def mean_all(a: Node) -> Node:
    return Node("mean_all", (a,), (1, 1))


def row_l2norm(a: Node) -> Node:
    """Per-row Euclidean norm (shift-stabilized): (n,d) -> (n,1)."""
    return Node("row_l2norm", (a,), (a.shape[0], 1))


def row_dist(a: Node, b: Node) -> Node:
    """Per-row Euclidean distance between paired rows: (n,d),(n,d) -> (n,1)."""
    if a.shape != b.shape:
        raise GraphError(f"row_dist: shapes {a.shape} != {b.shape}")
    return Node("row_dist", (a, b), (a.shape[0], 1))


def hconcat(*parts: Node) -> Node:
    if not parts:
        raise GraphError("hconcat of nothing")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise GraphError(f"hconcat: row counts differ ({p.shape[0]} vs {rows})")
    offsets = tuple(np.cumsum([0] + [p.shape[1] for p in parts]).tolist())
    return Node("hconcat", parts, (rows, offsets[-1]), meta=offsets)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if not 0 <= start < stop <= a.shape[1]:
        raise GraphError(f"slice_cols: [{start}:{stop}] out of width {a.shape[1]}")
    return Node("slice_cols", (a,), (a.shape[0], stop - start), meta=(start, stop))


# -------------------------------------------------------------- value rules


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax_rows(x):
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


_VALUE_RULES = {
    "add": lambda n, a, b: a + b,
    "mul": lambda n, a, b: a * b,
    "smul": lambda n, a: n.meta * a,
    "matmul": lambda n, a, b: (a.T if n.meta[0] else a) @ (b.T if n.meta[1] else b),
    "transpose": lambda n, a: a.T.copy(),
    "leaky_relu": lambda n, a: np.where(a > 0, a, n.meta * a),
    "leaky_mask": lambda n, a: np.where(a > 0, 1.0, n.meta),
    "sigmoid": lambda n, a: _sigmoid(a),
    "row_softmax": lambda n, a: _softmax_rows(a),
    "square": lambda n, a: a * a,
    "sqrt_shift": lambda n, a: np.sqrt(a + SQRT_SHIFT),
    "reciprocal": lambda n, a: 1.0 / a,
    "row_sum": lambda n, a: a.sum(axis=1, keepdims=True),
    "col_sum": lambda n, a: a.sum(axis=0, keepdims=True),
    "mean_all": lambda n, a: np.array([[a.mean()]]),
    "row_l2norm": lambda n, a: np.sqrt((a * a).sum(axis=1, keepdims=True) + SQRT_SHIFT),
    "row_dist": lambda n, a, b: np.sqrt(((a - b) ** 2).sum(axis=1, keepdims=True) + SQRT_SHIFT),
    "hconcat": lambda n, *parts: np.concatenate(parts, axis=1),
    "slice_cols": lambda n, a: a[:, n.meta[0]:n.meta[1]].copy(),
}


# ----------------------------------------------------------- gradient rules
#
# Each rule maps (node, adjoint node) to one contribution node per parent
# (None = no contribution). Contributions are themselves graphs, which is
# what makes a second grad() over them valid.


def _unbroadcast(g: Node, shape) -> Node:
    if g.shape[0] != shape[0]:
        g = col_sum(g)
    if g.shape[1] != shape[1]:
        g = row_sum(g)
    return g


def _zeros(shape) -> Node:
    return const(np.zeros(shape))


def _spread(g: Node, shape) -> Node:
    # inverse of _unbroadcast: add a zero tensor of the full shape
    return g if g.shape == shape else add(g, _zeros(shape))


def _g_add(n, g):
    return (_unbroadcast(g, n.parents[0].shape), _unbroadcast(g, n.parents[1].shape))


def _g_mul(n, g):
    a, b = n.parents
    return (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape))


def _g_matmul(n, g):
    a, b = n.parents
    ta, tb = n.meta
    da = matmul(g, b, tb=not tb)
    db = matmul(a, g, ta=not ta)
    return (transpose(da) if ta else da, transpose(db) if tb else db)


def _g_sigmoid(n, g):
    one = const([[1.0]])
    return (mul(g, mul(n, sub(one, n))),)


def _g_row_softmax(n, g):
    return (mul(n, sub(g, row_sum(mul(n, g)))),)


def _g_row_l2norm(n, g):
    (a,) = n.parents
    return (mul(a, mul(g, reciprocal(n))),)


def _g_row_dist(n, g):
    a, b = n.parents
    ga = mul(sub(a, b), mul(g, reciprocal(n)))
    return (ga, smul(ga, -1.0))


def _g_hconcat(n, g):
    offsets = n.meta
    return tuple(slice_cols(g, offsets[i], offsets[i + 1]) for i in range(len(n.parents)))


def _g_slice_cols(n, g):
    (a,) = n.parents
    start, stop = n.meta
    rows, width = a.shape
    parts = []
    if start > 0:
        parts.append(_zeros((rows, start)))
    parts.append(g)
    if stop < width:
        parts.append(_zeros((rows, width - stop)))
    return (hconcat(*parts) if len(parts) > 1 else g,)


_GRAD_RULES = {
    "add": _g_add,
    "mul": _g_mul,
    "smul": lambda n, g: (smul(g, n.meta),),
    "matmul": _g_matmul,
    "transpose": lambda n, g: (transpose(g),),
    "leaky_relu": lambda n, g: (mul(g, leaky_mask(n.parents[0], n.meta)),),
    "leaky_mask": lambda n, g: (None,),
    "sigmoid": _g_sigmoid,
    "row_softmax": _g_row_softmax,
    "square": lambda n, g: (mul(g, smul(n.parents[0], 2.0)),),
    "sqrt_shift": lambda n, g: (mul(g, smul(reciprocal(n), 0.5)),),
    "reciprocal": lambda n, g: (smul(mul(g, square(n)), -1.0),),
    "row_sum": lambda n, g: (_spread(g, n.parents[0].shape),),
    "col_sum": lambda n, g: (_spread(g, n.parents[0].shape),),
    "mean_all": lambda n, g: (smul(_spread(g, n.parents[0].shape),
                                   1.0 / (n.parents[0].shape[0] * n.parents[0].shape[1])),),
    "row_l2norm": _g_row_l2norm,
    "row_dist": _g_row_dist,
    "hconcat": _g_hconcat,
    "slice_cols": _g_slice_cols,
}

assert set(_VALUE_RULES) == set(_GRAD_RULES)


# ------------------------------------------------------------ grad and eval


def _toposort(outputs) -> list:
    order, seen = [], set()
    for root in outputs:
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
            # reversed so parents evaluate left-to-right
            for p in reversed(node.parents):
                if id(p) not in seen:
                    stack.append((p, False))
    return order


def _reaches(nodes, targets) -> set:
    """ids of nodes from which some target leaf is reachable via parents."""
    target_ids = {id(t) for t in targets}
    memo = {}
    for root in nodes:
        stack = [root]
        while stack:
            node = stack[-1]
            if id(node) in memo:
                stack.pop()
                continue
            if id(node) in target_ids:
                memo[id(node)] = True
                stack.pop()
                continue
            pending = [p for p in node.parents if id(p) not in memo]
            if pending:
                stack.extend(pending)
                continue
            memo[id(node)] = any(memo[id(p)] for p in node.parents)
            stack.pop()
    return {k for k, v in memo.items() if v}


def grad(output: Node, wrt) -> dict:
    """Reverse-mode gradients of a (1,1) output, one graph node per leaf in
    wrt. Leaves the output does not depend on get a zero constant."""
    if output.shape != (1, 1):
        raise GraphError(f"grad needs a scalar output, got shape {output.shape}")
    wrt = list(wrt)
    relevant = _reaches([output], wrt)
    adjoint = {id(output): const([[1.0]])}
    for node in reversed(_toposort([output])):
        g = adjoint.get(id(node))
        if g is None or not node.parents or id(node) not in relevant:
            continue
        contribs = _GRAD_RULES[node.kind](node, g)
        for parent, contrib in zip(node.parents, contribs):
            if contrib is None or id(parent) not in relevant:
                continue
            held = adjoint.get(id(parent))
            adjoint[id(parent)] = contrib if held is None else add(held, contrib)
    return {leaf: adjoint.get(id(leaf)) or _zeros(leaf.shape) for leaf in wrt}


class Evaluator:
    """Compiled forward pass for a fixed set of output nodes. run() binds
    data leaves, evaluates each node once in topological order, checks
    finiteness, and returns the outputs' values."""

    def __init__(self, outputs):
        self.outputs = tuple(outputs)
        self._plan = _toposort(self.outputs)

    def run(self, bindings=None) -> list:
        bindings = bindings or {}
        values = {}
        # NaN/Inf surface as NonFiniteError below, not as numpy warnings
        with np.errstate(all="ignore"):
            return self._run(bindings, values)

    def _run(self, bindings, values) -> list:
        for node in self._plan:
            if node.kind == "data":
                if node not in bindings:
                    raise GraphError(f"no binding for data leaf {node.name!r}")
                v = _as_tensor(bindings[node])
                if v.shape != node.shape:
                    raise GraphError(
                        f"binding for {node.name!r} has shape {v.shape}, wants {node.shape}"
                    )
            elif node.kind in _LEAF_KINDS:
                v = node.value
            else:
                args = [values[id(p)] for p in node.parents]
                v = _VALUE_RULES[node.kind](node, *args)
            if not np.isfinite(v).all():
                raise NonFiniteError(node)
            values[id(node)] = v
        return [values[id(o)] for o in self.outputs]


def eval_nodes(outputs, bindings=None) -> list:
    """One-shot evaluation without keeping the compiled plan around."""
    return Evaluator(outputs).run(bindings)


# --------------------------------------------------------------------- adam


class AdamState:
    """First/second moment tensors per parameter plus the step counter."""

    def __init__(self, params):
        self.m = {id(p): np.zeros(p.shape) for p in params}
        self.v = {id(p): np.zeros(p.shape) for p in params}
        self.t = 0


def adam_init(params) -> AdamState:
    return AdamState(params)


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Standard bias-corrected Adam; updates param values in place."""
    state.t += 1
    t = state.t
    for p in params:
        g = np.asarray(grads[p], dtype=np.float64)
        if not np.isfinite(g).all():
            raise NonFiniteError(p)
        m = state.m[id(p)]
        v = state.v[id(p)]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.value -= lr * mhat / (np.sqrt(vhat) + eps)
    return state


# -------------------------------------------------------------- checkpoints

_MAGIC = b"ADGRAD01"


def save_tensors(path, tensors: dict) -> None:
    """Write named float64 tensors: magic, then per tensor name length,
    name, rows, cols, row-major little-endian values."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for name, value in tensors.items():
            v = _as_tensor(value)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", v.shape[0], v.shape[1]))
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise GraphError(f"{path}: not a tensor checkpoint")
        out = {}
        while True:
            head = fh.read(4)
            if not head:
                return out
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            raw = fh.read(rows * cols * 8)
            if len(raw) != rows * cols * 8:
                raise GraphError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).astype(np.float64)
