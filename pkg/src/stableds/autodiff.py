"""Reverse-mode automatic differentiation on a flat tape.

Values are float64 scalars, 1-D vectors or 2-D matrices.  A Tape records
primitive operations in topological order; ``backward`` runs a single
reverse sweep and returns parameter gradients.  Gradients of a scalar
network output with respect to its *input* are built symbolically by
``input_gradient``: the reverse sweep emits new tape primitives instead of
numbers, so the resulting vector is itself differentiable with respect to
the parameters by one subsequent ``backward`` call.  No double-backward
tape semantics are needed anywhere.

Conventions at non-smooth points: relu'(0) = 0, and the relu gate mask is
treated as a constant in symbolic differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError

SCALAR = ()


def _shape_of(v):
    if isinstance(v, (float, int)):
        return SCALAR
    return np.shape(v)


def _sigmoid(z):
    # piecewise form avoids overflow in exp for large |z|
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class ParamVector:
    """Flat float64 parameter storage with named, disjoint segments."""

    values: np.ndarray
    layout: list  # of (name, offset, shape) triples

    def __post_init__(self):
        total = sum(int(np.prod(s)) for _, _, s in self.layout)
        if total != self.values.size:
            raise ConfigError(
                f"layout covers {total} entries, values has {self.values.size}")
        offsets = sorted((off, off + int(np.prod(s))) for _, off, s in self.layout)
        prev_end = 0
        for start, end in offsets:
            if start != prev_end:
                raise ConfigError("param segments must be disjoint and covering")
            prev_end = end

    def segment(self, name):
        for n, off, shape in self.layout:
            if n == name:
                size = int(np.prod(shape))
                return self.values[off:off + size].reshape(shape)
        raise ConfigError(f"no segment named {name!r}")

    def segment_names(self):
        return [n for n, _, _ in self.layout]

    def copy(self):
        return ParamVector(self.values.copy(), list(self.layout))

    @classmethod
    def from_segments(cls, segments):
        """Build from an ordered list of (name, array)."""
        layout, chunks, off = [], [], 0
        for name, arr in segments:
            arr = np.asarray(arr, dtype=np.float64)
            layout.append((name, off, arr.shape))
            chunks.append(arr.ravel())
            off += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)


class Node:
    __slots__ = ("op", "inputs", "value", "aux")

    def __init__(self, op, inputs, value, aux=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.aux = aux


@dataclass(frozen=True)
class Value:
    """Handle to one tape node."""

    tape: "Tape"
    nid: int

    @property
    def value(self):
        return self.tape.nodes[self.nid].value

    @property
    def shape(self):
        return _shape_of(self.tape.nodes[self.nid].value)

    def __add__(self, other):
        return self.tape.record("add", self, other)

    def __sub__(self, other):
        return self.tape.record("sub", self, other)

    def __mul__(self, other):
        return self.tape.record("mul", self, other)

    def __truediv__(self, other):
        return self.tape.record("div", self, other)

    def __neg__(self):
        return self.tape.record("neg", self)


PRIMITIVES = frozenset([
    "add", "sub", "mul", "div", "matvec", "matvec_t", "dot", "scale",
    "square", "sqrt", "tanh", "softplus", "sigmoid", "relu", "sum", "neg",
])

_LEAVES = frozenset(["const", "input", "param"])


def _forward(op, vals):
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "div":
        return vals[0] / vals[1]
    if op == "neg":
        return -vals[0]
    if op == "scale":
        return vals[0] * vals[1]
    if op == "square":
        return vals[0] * vals[0]
    if op == "sqrt":
        return np.sqrt(vals[0])
    if op == "tanh":
        return np.tanh(vals[0])
    if op == "softplus":
        return _softplus(vals[0])
    if op == "sigmoid":
        return _sigmoid(vals[0])
    if op == "relu":
        return np.maximum(vals[0], 0.0)
    if op == "sum":
        return float(np.sum(vals[0]))
    if op == "dot":
        return float(np.dot(vals[0], vals[1]))
    if op == "matvec":
        return vals[0] @ vals[1]
    if op == "matvec_t":
        return vals[0].T @ vals[1]
    raise ConfigError(f"unknown primitive {op!r}")


def _check_shapes(op, shapes):
    ok = True
    if op in ("add", "sub", "mul", "div"):
        ok = shapes[0] == shapes[1]
    elif op == "scale":
        ok = shapes[0] == SCALAR
    elif op in ("square", "sqrt", "tanh", "softplus", "sigmoid", "relu", "neg"):
        ok = True
    elif op == "sum":
        ok = len(shapes[0]) == 1
    elif op == "dot":
        ok = len(shapes[0]) == 1 and shapes[0] == shapes[1]
    elif op == "matvec":
        ok = len(shapes[0]) == 2 and len(shapes[1]) == 1 and shapes[0][1] == shapes[1][0]
    elif op == "matvec_t":
        ok = len(shapes[0]) == 2 and len(shapes[1]) == 1 and shapes[0][0] == shapes[1][0]
    if not ok:
        raise ConfigError(f"shape mismatch for {op}: {shapes}")


class Tape:
    """Append-only record of primitive ops; single-owner during construction."""

    def __init__(self):
        self.nodes = []
        self._params = {}  # id(pv) -> ParamVector

    def _append(self, node):
        self.nodes.append(node)
        return Value(self, len(self.nodes) - 1)

    def const(self, value):
        value = float(value) if np.isscalar(value) else np.asarray(value, dtype=np.float64)
        return self._append(Node("const", (), value))

    def input(self, value):
        value = float(value) if np.isscalar(value) else np.asarray(value, dtype=np.float64)
        return self._append(Node("input", (), value))

    def param(self, pv: ParamVector, name: str):
        """Leaf holding one named segment of a ParamVector."""
        self._params[id(pv)] = pv
        value = np.array(pv.segment(name), dtype=np.float64)
        return self._append(Node("param", (), value, aux=(id(pv), name)))

    def record(self, op, *inputs):
        if op not in PRIMITIVES:
            raise ConfigError(f"unknown primitive {op!r}")
        vals = [self.nodes[v.nid].value for v in inputs]
        _check_shapes(op, [_shape_of(v) for v in vals])
        if op == "div":
            den = vals[1]
            if np.any(np.asarray(den) == 0.0):
                raise NumericError("division by exact zero")
        out = _forward(op, vals)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite forward value in {op}")
        return self._append(Node(op, tuple(v.nid for v in inputs), out))

    # -- numeric reverse sweep ------------------------------------------------

    def backward(self, loss: Value):
        """Single reverse pass; returns {id(pv): flat gradient array}.

        Parameters never touched by the loss graph get zero gradients.
        """
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if _shape_of(self.nodes[loss.nid].value) != SCALAR:
            raise ContractError("loss must be scalar")
        grads = {pid: np.zeros_like(pv.values) for pid, pv in self._params.items()}
        adj = {loss.nid: 1.0}
        for nid in range(loss.nid, -1, -1):
            if nid not in adj:
                continue
            node = self.nodes[nid]
            a = adj.pop(nid)
            if node.op == "param":
                pid, name = node.aux
                pv = self._params[pid]
                for n, off, shape in pv.layout:
                    if n == name:
                        grads[pid][off:off + int(np.prod(shape))] += np.ravel(a)
                        break
                continue
            if node.op in _LEAVES:
                continue
            vals = [self.nodes[i].value for i in node.inputs]
            contribs = self._vjp(node, a, vals)
            for inp, c in zip(node.inputs, contribs):
                if c is None:
                    continue
                if inp in adj:
                    adj[inp] = adj[inp] + c
                else:
                    adj[inp] = c
        return grads

    def grad(self, loss: Value, pv: ParamVector):
        grads = self.backward(loss)
        return grads.get(id(pv), np.zeros_like(pv.values))

    @staticmethod
    def _vjp(node, a, vals):
        op, y = node.op, node.value
        if op == "add":
            return (a, a)
        if op == "sub":
            return (a, -a)
        if op == "neg":
            return (-a,)
        if op == "mul":
            return (a * vals[1], a * vals[0])
        if op == "div":
            return (a / vals[1], -a * vals[0] / (vals[1] * vals[1]))
        if op == "scale":
            return (float(np.sum(a * vals[1])), a * vals[0])
        if op == "square":
            return (2.0 * a * vals[0],)
        if op == "sqrt":
            return (0.5 * a / y,)
        if op == "tanh":
            return (a * (1.0 - y * y),)
        if op == "softplus":
            return (a * _sigmoid(vals[0]),)
        if op == "sigmoid":
            return (a * y * (1.0 - y),)
        if op == "relu":
            return (a * (np.asarray(vals[0]) > 0.0).astype(np.float64) if
                    _shape_of(vals[0]) != SCALAR else a * (1.0 if vals[0] > 0.0 else 0.0),)
        if op == "sum":
            return (np.full(np.shape(vals[0]), a),)
        if op == "dot":
            return (a * vals[1], a * vals[0])
        if op == "matvec":
            return (np.outer(np.asarray(a), vals[1]), vals[0].T @ np.asarray(a))
        if op == "matvec_t":
            return (np.outer(vals[1], np.asarray(a)), vals[0] @ np.asarray(a))
        raise ConfigError(f"no vjp for {op}")

    # -- symbolic reverse sweep (input gradients) -----------------------------

    def _sym_vjp(self, nid, a: Value, ins, needed):
        """Adjoint Values for node inputs; entries not in `needed` are None."""
        node = self.nodes[nid]
        op = node.op
        y = Value(self, nid)
        res = [None, None]

        def want(i):
            return node.inputs[i] in needed

        if op == "add":
            if want(0):
                res[0] = a
            if want(1):
                res[1] = a
        elif op == "sub":
            if want(0):
                res[0] = a
            if want(1):
                res[1] = -a
        elif op == "neg":
            if want(0):
                res[0] = -a
        elif op == "mul":
            if want(0):
                res[0] = a * ins[1]
            if want(1):
                res[1] = a * ins[0]
        elif op == "div":
            if want(0):
                res[0] = a / ins[1]
            if want(1):
                res[1] = -(a * ins[0]) / self.record("square", ins[1])
        elif op == "scale":
            if want(0):
                res[0] = self.record("sum", a * ins[1]) if _shape_of(ins[1].value) != SCALAR \
                    else a * ins[1]
            if want(1):
                res[1] = self.record("scale", ins[0], a)
        elif op == "square":
            if want(0):
                res[0] = self.record("scale", self.const(2.0), a * ins[0])
        elif op == "sqrt":
            if want(0):
                res[0] = self.record("scale", self.const(0.5), a / y)
        elif op == "tanh":
            if want(0):
                ones = self.const(np.ones(np.shape(node.value)) if
                                  _shape_of(node.value) != SCALAR else 1.0)
                res[0] = a * (ones - self.record("square", y))
        elif op == "softplus":
            if want(0):
                res[0] = a * self.record("sigmoid", ins[0])
        elif op == "sigmoid":
            if want(0):
                ones = self.const(np.ones(np.shape(node.value)) if
                                  _shape_of(node.value) != SCALAR else 1.0)
                res[0] = a * (y * (ones - y))
        elif op == "relu":
            if want(0):
                mask = (np.asarray(node.value) > 0.0).astype(np.float64) \
                    if _shape_of(node.value) != SCALAR else (1.0 if node.value > 0.0 else 0.0)
                res[0] = a * self.const(mask)
        elif op == "sum":
            if want(0):
                res[0] = self.record("scale", a, self.const(np.ones(np.shape(self.nodes[node.inputs[0]].value))))
        elif op == "dot":
            if want(0):
                res[0] = self.record("scale", a, ins[1])
            if want(1):
                res[1] = self.record("scale", a, ins[0])
        elif op == "matvec":
            if want(0):
                raise ContractError("input_gradient through a matrix operand is unsupported")
            if want(1):
                res[1] = self.record("matvec_t", ins[0], a)
        elif op == "matvec_t":
            if want(0):
                raise ContractError("input_gradient through a matrix operand is unsupported")
            if want(1):
                res[1] = self.record("matvec", ins[0], a)
        else:
            raise ConfigError(f"no symbolic vjp for {op}")
        return res[:len(node.inputs)]


def input_gradient(tape: Tape, output: Value, x: Value) -> Value:
    """Gradient of a scalar `output` with respect to the vector `x`.

    Emitted as explicit tape primitives (a symbolic reverse sweep), so the
    returned vector stays differentiable with respect to any parameters in
    the graph via one ordinary ``backward`` call.
    """
    if output.tape is not tape or x.tape is not tape:
        raise ContractError("output/x must live on the given tape")
    if _shape_of(output.value) != SCALAR:
        raise ContractError("input_gradient requires a scalar output")
    xshape = _shape_of(x.value)
    if len(xshape) != 1:
        raise ContractError("x must be a vector")

    # forward scan: which nodes depend on x
    dep = {x.nid}
    for nid in range(x.nid + 1, output.nid + 1):
        if any(i in dep for i in tape.nodes[nid].inputs):
            dep.add(nid)
    if output.nid not in dep:
        return tape.const(np.zeros(xshape))

    adj = {output.nid: tape.const(1.0)}
    for nid in range(output.nid, x.nid, -1):
        if nid not in adj or nid not in dep:
            continue
        node = tape.nodes[nid]
        a = adj.pop(nid)
        ins = [Value(tape, i) for i in node.inputs]
        contribs = tape._sym_vjp(nid, a, ins, dep)
        for inp, c in zip(node.inputs, contribs):
            if c is None:
                continue
            adj[inp] = (adj[inp] + c) if inp in adj else c
    return adj.get(x.nid, tape.const(np.zeros(xshape)))


def jacobian_fd(field, x, h=1e-4):
    """Central-difference Jacobian of a plain vector field; a constant, not
    tape-recorded."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (np.asarray(field(x + e)) - np.asarray(field(x - e))) / (2.0 * h)
    return J


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_index: int
    passed: bool
    n_checked: int


def gradcheck(builder, pv: ParamVector, tol=1e-5, h=1e-6, coords=None, rng=None):
    """Compare ``backward`` against central finite differences.

    `builder(tape, pv)` must construct a scalar loss Value.  `coords` limits
    the check to a random coordinate subset (all coordinates when None).
    """
    tape = Tape()
    loss = builder(tape, pv)
    analytic = tape.grad(loss, pv)

    idx = np.arange(pv.values.size)
    if coords is not None and coords < idx.size:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(idx.size, size=coords, replace=False)

    max_rel, worst = 0.0, -1
    for i in idx:
        saved = pv.values[i]
        pv.values[i] = saved + h
        lp = builder(Tape(), pv).value
        pv.values[i] = saved - h
        lm = builder(Tape(), pv).value
        pv.values[i] = saved
        fd = (lp - lm) / (2.0 * h)
        rel = abs(analytic[i] - fd) / max(1.0, abs(fd), abs(analytic[i]))
        if rel > max_rel:
            max_rel, worst = rel, int(i)
    return GradcheckReport(max_rel, worst, max_rel < tol, len(idx))
