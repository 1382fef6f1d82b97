"""Reverse-mode automatic differentiation over dense numpy vectors and matrices.

A :class:`Graph` is built fresh for every example and thrown away after one
backward pass. Values are float64 numpy arrays; scalars are 0-d arrays.
Parameters live in a :class:`ParameterStore` that outlives the graphs and
collects gradients from each backward pass.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        desc = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: non-conforming shapes {desc}")


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


class Node:
    __slots__ = ("graph", "id", "op", "inputs", "value", "cache", "attrs")

    def __init__(self, graph, id, op, inputs, value, cache=None, attrs=None):
        self.graph = graph
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.cache = cache
        self.attrs = attrs or {}

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.id}, {self.op}, shape={self.value.shape})"


@dataclass(frozen=True)
class Op:
    forward: Callable
    backward: Callable


def _vec(op, *xs):
    for x in xs:
        if x.ndim != 1:
            raise ShapeError(op, *(y.shape for y in xs))


def _same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# Each forward takes input values and attrs, returns (output, cache).
# Each backward takes (upstream grad, input values, output, cache, attrs) and
# returns one gradient (or None) per input.

def _matvec_fwd(vals, attrs):
    W, x = vals
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError("matvec", W.shape, x.shape)
    return W @ x, None


def _matvec_bwd(g, vals, out, cache, attrs):
    W, x = vals
    return np.outer(g, x), W.T @ g


def _tmatvec_fwd(vals, attrs):
    W, x = vals
    if W.ndim != 2 or x.ndim != 1 or W.shape[0] != x.shape[0]:
        raise ShapeError("tmatvec", W.shape, x.shape)
    return W.T @ x, None


def _tmatvec_bwd(g, vals, out, cache, attrs):
    W, x = vals
    return np.outer(x, g), W @ g


def _add_fwd(vals, attrs):
    _same("add", *vals)
    return vals[0] + vals[1], None


def _add_bwd(g, vals, out, cache, attrs):
    return g, g


def _sub_fwd(vals, attrs):
    _same("sub", *vals)
    return vals[0] - vals[1], None


def _sub_bwd(g, vals, out, cache, attrs):
    return g, -g


def _mul_fwd(vals, attrs):
    _same("mul", *vals)
    return vals[0] * vals[1], None


def _mul_bwd(g, vals, out, cache, attrs):
    a, b = vals
    return g * b, g * a


def _scale_fwd(vals, attrs):
    return vals[0] * attrs["factor"], None


def _scale_bwd(g, vals, out, cache, attrs):
    return (g * attrs["factor"],)


def _dot_fwd(vals, attrs):
    a, b = vals
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError("dot", a.shape, b.shape)
    return np.asarray(a @ b, dtype=DTYPE), None


def _dot_bwd(g, vals, out, cache, attrs):
    a, b = vals
    return g * b, g * a


def _concat_fwd(vals, attrs):
    _vec("concat", *vals)
    return np.concatenate(vals), [v.shape[0] for v in vals]


def _concat_bwd(g, vals, out, sizes, attrs):
    return tuple(np.split(g, np.cumsum(sizes)[:-1]))


def _slice_fwd(vals, attrs):
    (x,) = vals
    start, stop = attrs["start"], attrs["stop"]
    if x.ndim != 1 or not 0 <= start < stop <= x.shape[0]:
        raise ShapeError("slice", x.shape, (start, stop))
    return x[start:stop].copy(), None


def _slice_bwd(g, vals, out, cache, attrs):
    gx = np.zeros_like(vals[0])
    gx[attrs["start"]:attrs["stop"]] = g
    return (gx,)


def _sigmoid_fwd(vals, attrs):
    x = vals[0]
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out, None


def _sigmoid_bwd(g, vals, out, cache, attrs):
    return (g * out * (1.0 - out),)


def _tanh_fwd(vals, attrs):
    return np.tanh(vals[0]), None


def _tanh_bwd(g, vals, out, cache, attrs):
    return (g * (1.0 - out * out),)


def _relu_fwd(vals, attrs):
    return np.maximum(vals[0], 0.0), None


def _relu_bwd(g, vals, out, cache, attrs):
    return (g * (vals[0] > 0),)


def _sqdiff_fwd(vals, attrs):
    _same("sqdiff", *vals)
    d = vals[0] - vals[1]
    return d * d, d


def _sqdiff_bwd(g, vals, out, d, attrs):
    return 2.0 * g * d, -2.0 * g * d


def _sum_fwd(vals, attrs):
    return np.asarray(vals[0].sum(), dtype=DTYPE), None


def _sum_bwd(g, vals, out, cache, attrs):
    return (np.full_like(vals[0], g),)


def _log_softmax_fwd(vals, attrs):
    x = vals[0]
    _vec("log_softmax", x)
    z = x - x.max()
    out = z - np.log(np.exp(z).sum())
    return out, None


def _log_softmax_bwd(g, vals, out, cache, attrs):
    return (g - np.exp(out) * g.sum(),)


def _pick_fwd(vals, attrs):
    x = vals[0]
    i = attrs["index"]
    if x.ndim != 1 or not 0 <= i < x.shape[0]:
        raise ShapeError("pick", x.shape, (i,))
    return np.asarray(attrs["sign"] * x[i], dtype=DTYPE), None


def _pick_bwd(g, vals, out, cache, attrs):
    gx = np.zeros_like(vals[0])
    gx[attrs["index"]] = attrs["sign"] * g
    return (gx,)


OPS: dict[str, Op] = {
    "matvec": Op(_matvec_fwd, _matvec_bwd),
    "tmatvec": Op(_tmatvec_fwd, _tmatvec_bwd),
    "add": Op(_add_fwd, _add_bwd),
    "sub": Op(_sub_fwd, _sub_bwd),
    "mul": Op(_mul_fwd, _mul_bwd),
    "scale": Op(_scale_fwd, _scale_bwd),
    "dot": Op(_dot_fwd, _dot_bwd),
    "concat": Op(_concat_fwd, _concat_bwd),
    "slice": Op(_slice_fwd, _slice_bwd),
    "sigmoid": Op(_sigmoid_fwd, _sigmoid_bwd),
    "tanh": Op(_tanh_fwd, _tanh_bwd),
    "relu": Op(_relu_fwd, _relu_bwd),
    "sqdiff": Op(_sqdiff_fwd, _sqdiff_bwd),
    "sum": Op(_sum_fwd, _sum_bwd),
    "log_softmax": Op(_log_softmax_fwd, _log_softmax_bwd),
    "pick": Op(_pick_fwd, _pick_bwd),
}


class ParameterStore:
    """Named parameters with persistent identity and gradient accumulators."""

    FORMAT = b"RLTREE-PARAMS"
    VERSION = 1

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=DTYPE)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def names(self) -> list[str]:
        return list(self.values)

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, v in snap.items():
            self.values[k][...] = v

    # serialization: magic line, JSON metadata block, then one record per
    # parameter (name, shape, raw little-endian float64 values)

    def dumps(self, meta: dict | None = None) -> bytes:
        buf = io.BytesIO()
        buf.write(self.FORMAT + b" %d\n" % self.VERSION)
        blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
        buf.write(b"meta %d\n" % len(blob))
        buf.write(blob + b"\n")
        buf.write(b"count %d\n" % len(self.values))
        for name in sorted(self.values):
            v = self.values[name]
            dims = " ".join(str(d) for d in v.shape)
            buf.write(f"param {name} {v.ndim} {dims}\n".encode("utf-8"))
            buf.write(v.astype("<f8").tobytes())
            buf.write(b"\n")
        return buf.getvalue()

    def save(self, path, meta: dict | None = None):
        with open(path, "wb") as f:
            f.write(self.dumps(meta))

    @classmethod
    def loads(cls, data: bytes) -> tuple["ParameterStore", dict]:
        buf = io.BytesIO(data)

        def line():
            raw = buf.readline()
            if not raw.endswith(b"\n"):
                raise ValueError("truncated checkpoint")
            return raw[:-1]

        head = line().split()
        if len(head) != 2 or head[0] != cls.FORMAT:
            raise ValueError("not a parameter checkpoint")
        if int(head[1]) != cls.VERSION:
            raise ValueError(f"unsupported checkpoint version {head[1].decode()}")
        tag, nbytes = line().split()
        if tag != b"meta":
            raise ValueError("missing metadata block")
        meta = json.loads(buf.read(int(nbytes)).decode("utf-8"))
        buf.read(1)
        tag, count = line().split()
        store = cls()
        for _ in range(int(count)):
            fields = line().decode("utf-8").split(" ")
            if fields[0] != "param":
                raise ValueError("malformed parameter record")
            name, ndim = fields[1], int(fields[2])
            shape = tuple(int(d) for d in fields[3:3 + ndim])
            n = int(np.prod(shape, dtype=np.int64))
            raw = buf.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"truncated values for {name}")
            store.add(name, np.frombuffer(raw, dtype="<f8").reshape(shape))
            buf.read(1)
        return store, meta

    @classmethod
    def load(cls, path) -> tuple["ParameterStore", dict]:
        with open(path, "rb") as f:
            return cls.loads(f.read())


def glorot_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class Graph:
    """A per-example computation graph.

    Nodes are appended in creation order, which is always a topological
    order. Parameter leaves are bound to a :class:`ParameterStore` and
    receive gradients when :meth:`backward` runs.
    """

    def __init__(self, store: ParameterStore | None = None, check_finite: bool = True):
        self.store = store
        self.nodes: list[Node] = []
        self.check_finite = check_finite
        self._params: dict[str, Node] = {}
        self._consumed = False

    def _append(self, op, inputs, value, cache=None, attrs=None) -> Node:
        if self._consumed:
            raise GraphError("graph already consumed by backward")
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op} produced a non-finite value")
        node = Node(self, len(self.nodes), op, inputs, value, cache, attrs)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._append("const", (), np.array(value, dtype=DTYPE))

    def zeros(self, n: int) -> Node:
        return self.constant(np.zeros(n))

    def param(self, name: str) -> Node:
        """Leaf node for a stored parameter; reused within one graph."""
        node = self._params.get(name)
        if node is None:
            if self.store is None:
                raise GraphError("graph has no parameter store")
            # the store array is not copied: it is not modified until after backward
            node = self._append("param", (), self.store[name], attrs={"name": name})
            self._params[name] = node
        return node

    def lookup(self, name: str, index: int) -> Node:
        """Row ``index`` of matrix parameter ``name`` (sparse gradient)."""
        table = self.store[name]
        if table.ndim != 2 or not 0 <= index < table.shape[0]:
            raise ShapeError("lookup", table.shape, (index,))
        return self._append("lookup", (), table[index].copy(),
                            attrs={"name": name, "index": index})

    def forward(self, op: str, *inputs: Node, **attrs) -> Node:
        spec = OPS.get(op)
        if spec is None:
            raise KeyError(f"unknown op {op!r}")
        for x in inputs:
            if x.graph is not self:
                raise GraphError("input node belongs to another graph")
        value, cache = spec.forward([x.value for x in inputs], attrs)
        return self._append(op, inputs, np.asarray(value, dtype=DTYPE), cache, attrs)

    # thin wrappers, for readability at call sites
    def matvec(self, W, x):
        return self.forward("matvec", W, x)

    def tmatvec(self, W, x):
        return self.forward("tmatvec", W, x)

    def add(self, a, b):
        return self.forward("add", a, b)

    def sub(self, a, b):
        return self.forward("sub", a, b)

    def mul(self, a, b):
        return self.forward("mul", a, b)

    def scale(self, x, factor: float):
        return self.forward("scale", x, factor=float(factor))

    def dot(self, a, b):
        return self.forward("dot", a, b)

    def concat(self, *xs):
        return self.forward("concat", *xs)

    def slice(self, x, start: int, stop: int):
        return self.forward("slice", x, start=start, stop=stop)

    def sigmoid(self, x):
        return self.forward("sigmoid", x)

    def tanh(self, x):
        return self.forward("tanh", x)

    def relu(self, x):
        return self.forward("relu", x)

    def sqdiff(self, a, b):
        return self.forward("sqdiff", a, b)

    def sum(self, x):
        return self.forward("sum", x)

    def log_softmax(self, x):
        return self.forward("log_softmax", x)

    def pick(self, x, index: int):
        return self.forward("pick", x, index=int(index), sign=1.0)

    def nll(self, logp, index: int):
        return self.forward("pick", logp, index=int(index), sign=-1.0)

    def affine(self, W: str, x: Node, b: str) -> Node:
        return self.add(self.matvec(self.param(W), x), self.param(b))

    def add_all(self, nodes: list[Node]) -> Node:
        total = nodes[0]
        for n in nodes[1:]:
            total = self.add(total, n)
        return total

    def backward(self, root: Node) -> dict[int, np.ndarray]:
        """Gradients of scalar ``root`` w.r.t. every node it depends on.

        Parameter gradients are added into the store accumulators. The graph
        can be differentiated only once.
        """
        if self._consumed:
            raise GraphError("backward called twice on the same graph")
        if root.graph is not self:
            raise GraphError("root belongs to another graph")
        if root.value.size != 1:
            raise GraphError(f"backward root must be scalar, got shape {root.shape}")
        self._consumed = True
        grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.value)}
        for node in reversed(self.nodes[:root.id + 1]):
            g = grads.get(node.id)
            if g is None:
                continue
            if node.op == "param":
                self.store.grads[node.attrs["name"]] += g
                continue
            if node.op == "lookup":
                self.store.grads[node.attrs["name"]][node.attrs["index"]] += g
                continue
            if not node.inputs:
                continue
            in_grads = OPS[node.op].backward(g, [x.value for x in node.inputs],
                                             node.value, node.cache, node.attrs)
            for x, gx in zip(node.inputs, in_grads):
                if gx is None:
                    continue
                prev = grads.get(x.id)
                grads[x.id] = gx if prev is None else prev + gx
        return grads


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in sorted(self.max_rel_error.items())]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"worst {self.worst:.3e} vs tol {self.tolerance:g}: {status}")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_difference_check(fn: Callable[[Graph], Node], params: ParameterStore,
                            step: float = 1e-5, tolerance: float = 1e-4,
                            names=None, max_coords: int | None = None,
                            rng: np.random.Generator | None = None,
                            floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients of ``fn`` with central differences.

    ``fn`` receives a fresh graph over ``params`` and returns the scalar node.
    It must be deterministic. With ``max_coords`` set, only that many randomly
    chosen coordinates per parameter are perturbed.
    """
    def evaluate() -> float:
        g = Graph(params, check_finite=False)
        out = float(fn(g).value)
        if not np.isfinite(out):
            raise NonFiniteError("function returned a non-finite value")
        return out

    params.zero_grad()
    g = Graph(params)
    root = fn(g)
    if not np.isfinite(root.value).all():
        raise NonFiniteError("function returned a non-finite value")
    g.backward(root)
    analytic = {k: v.copy() for k, v in params.grads.items()}
    params.zero_grad()

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tolerance=tolerance)
    for name in names or params.names():
        value = params[name]
        flat = value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for k in coords:
            orig = flat[k]
            flat[k] = orig + step
            f_plus = evaluate()
            flat[k] = orig - step
            f_minus = evaluate()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = float(relative_error(analytic[name].reshape(-1)[k], numeric, floor))
            worst = max(worst, err)
        report.max_rel_error[name] = worst
    return report

