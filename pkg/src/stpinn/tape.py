"""Array-valued reverse-mode autodiff tape.

Every elementary operation (add, multiply, tanh, clamped power, reciprocal,
matmul, reductions) is recorded as a node holding its opcode, parent node ids
and any constant operands.  A single reverse sweep from a scalar result yields
adjoints for every recorded value, in particular for parameter leaves.

Values are float64 numpy arrays throughout.  Operations accept a mix of
``Var`` and plain ndarray/float operands; plain operands are treated as
constants (no adjoint).  The same arithmetic code therefore runs untaped on
raw numpy arrays, which is used for values-only evaluation paths.

A tape is single-owner: build it, run one reverse sweep, discard it.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "tanh",
    "clamp_min",
    "powc",
    "reciprocal",
    "matmul",
    "mean",
    "asum",
]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if np.shape(g) == shape:
        return g
    extra = np.ndim(g) - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def _mat2d(x: np.ndarray) -> np.ndarray:
    # collapse leading axes so BLAS sees one 2-D problem
    return x if x.ndim == 2 else x.reshape(-1, x.shape[-1])


# Forward functions: fwd(parent_values, aux) -> value.
# Backward functions: bwd(g, parent_values, out_value, aux) -> per-parent grads.

def _fw_add(v, aux):
    return v[0] + v[1] if aux is None else v[0] + aux


def _bw_add(g, v, out, aux):
    if aux is None:
        return (_unbroadcast(g, np.shape(v[0])), _unbroadcast(g, np.shape(v[1])))
    return (_unbroadcast(g, np.shape(v[0])),)


def _fw_sub(v, aux):
    return v[0] - v[1] if aux is None else v[0] - aux


def _bw_sub(g, v, out, aux):
    if aux is None:
        return (_unbroadcast(g, np.shape(v[0])), _unbroadcast(-g, np.shape(v[1])))
    return (_unbroadcast(g, np.shape(v[0])),)


def _fw_rsub(v, aux):  # aux - v[0]
    return aux - v[0]


def _bw_rsub(g, v, out, aux):
    return (_unbroadcast(-g, np.shape(v[0])),)


def _fw_mul(v, aux):
    return v[0] * v[1] if aux is None else v[0] * aux


def _bw_mul(g, v, out, aux):
    if aux is None:
        return (
            _unbroadcast(g * v[1], np.shape(v[0])),
            _unbroadcast(g * v[0], np.shape(v[1])),
        )
    return (_unbroadcast(g * aux, np.shape(v[0])),)


def _fw_neg(v, aux):
    return -v[0]


def _bw_neg(g, v, out, aux):
    return (-g,)


def _fw_tanh(v, aux):
    return np.tanh(v[0])


def _bw_tanh(g, v, out, aux):
    return (g * (1.0 - out * out),)


def _fw_powc(v, aux):
    return v[0] ** aux


def _bw_powc(g, v, out, aux):
    return (g * (aux * v[0] ** (aux - 1.0)),)


def _fw_clamp_min(v, aux):
    return np.maximum(v[0], aux)


def _bw_clamp_min(g, v, out, aux):
    return (g * (v[0] > aux),)


def _fw_recip(v, aux):
    return 1.0 / v[0]


def _bw_recip(g, v, out, aux):
    return (-g * out * out,)


def _fw_matmul(v, aux):
    x, w = v[0], (v[1] if aux is None else aux)
    return (_mat2d(x) @ w).reshape(x.shape[:-1] + (w.shape[-1],))


def _fw_matmul_cw(v, aux):  # constant x (in aux), variable w
    x, w = aux, v[0]
    return (_mat2d(x) @ w).reshape(x.shape[:-1] + (w.shape[-1],))


def _bw_matmul(g, v, out, aux):
    x, w = v[0], (v[1] if aux is None else aux)
    g2 = _mat2d(g)
    gx = (g2 @ w.T).reshape(np.shape(x))
    if aux is None:
        return (gx, _mat2d(x).T @ g2)
    return (gx,)


def _bw_matmul_cw(g, v, out, aux):
    return (_mat2d(aux).T @ _mat2d(g),)


def _fw_mean(v, aux):
    return np.mean(v[0])


def _bw_mean(g, v, out, aux):
    x = v[0]
    return (np.full(np.shape(x), float(g) / np.size(x)),)


def _fw_sum(v, aux):
    return np.sum(v[0])


def _bw_sum(g, v, out, aux):
    return (np.full(np.shape(v[0]), float(g)),)


def _fw_reshape(v, aux):
    return np.reshape(v[0], aux)


def _bw_reshape(g, v, out, aux):
    return (np.reshape(g, np.shape(v[0])),)


_OPS = {
    "add": (_fw_add, _bw_add),
    "sub": (_fw_sub, _bw_sub),
    "rsub": (_fw_rsub, _bw_rsub),
    "mul": (_fw_mul, _bw_mul),
    "neg": (_fw_neg, _bw_neg),
    "tanh": (_fw_tanh, _bw_tanh),
    "powc": (_fw_powc, _bw_powc),
    "clamp_min": (_fw_clamp_min, _bw_clamp_min),
    "recip": (_fw_recip, _bw_recip),
    "matmul": (_fw_matmul, _bw_matmul),
    "matmul_cw": (_fw_matmul_cw, _bw_matmul_cw),
    "mean": (_fw_mean, _bw_mean),
    "sum": (_fw_sum, _bw_sum),
    "reshape": (_fw_reshape, _bw_reshape),
}


def register_op(name: str, fwd, bwd) -> None:
    """Add a fused opcode: fwd(parent_values, aux) and bwd(g, parent_values,
    out_value, aux) -> per-parent grads.  Used for performance kernels."""
    if name in _OPS:
        raise ValueError(f"opcode {name!r} already registered")
    _OPS[name] = (fwd, bwd)


class Var:
    """Handle to one recorded value on a tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.idx]

    @property
    def shape(self):
        return np.shape(self.tape._values[self.idx])

    def __add__(self, other):
        return self.tape._binary("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape._binary("sub", self, other)

    def __rsub__(self, other):
        return self.tape._record("rsub", (self.idx,), _as_const(other))

    def __mul__(self, other):
        return self.tape._binary("mul", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape._record("neg", (self.idx,), None)

    def reshape(self, shape) -> "Var":
        return self.tape._record("reshape", (self.idx,), tuple(shape))

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"


def _as_const(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tape:
    """Ordered record of elementary operations with reverse-sweep adjoints."""

    def __init__(self):
        self._ops: list[tuple] = []  # (opcode | None, parent ids, aux)
        self._values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._values)

    def leaf(self, value) -> Var:
        """Register a differentiable leaf (e.g. one parameter array)."""
        return self._append(None, (), None, _as_const(value))

    def _append(self, op, parents, aux, value) -> Var:
        self._ops.append((op, parents, aux))
        self._values.append(value)
        return Var(self, len(self._values) - 1)

    def _record(self, op, parents, aux) -> Var:
        fwd = _OPS[op][0]
        vals = tuple(self._values[p] for p in parents)
        return self._append(op, parents, aux, fwd(vals, aux))

    def _binary(self, op: str, a: Var, b) -> Var:
        if isinstance(b, Var):
            if b.tape is not self:
                raise ValueError("operands live on different tapes")
            return self._record(op, (a.idx, b.idx), None)
        return self._record(op, (a.idx,), _as_const(b))

    def apply(self, op: str, parents: tuple, aux=None) -> Var:
        """Record a registered opcode over Var parents."""
        for p in parents:
            self._check(p)
        return self._record(op, tuple(p.idx for p in parents), aux)

    def _check(self, v: Var) -> None:
        if not isinstance(v, Var) or v.tape is not self or not (0 <= v.idx < len(self._values)):
            raise ValueError("handle is not on this tape")

    def backward(self, result: Var) -> list:
        """Reverse sweep from a scalar ``result``; returns adjoint per node id.

        Entries are None for nodes that do not influence the result.
        """
        self._check(result)
        if np.size(self._values[result.idx]) != 1:
            raise ValueError("reverse sweep requires a scalar result")
        adj: list = [None] * (result.idx + 1)
        adj[result.idx] = np.float64(1.0)
        ops, values = self._ops, self._values
        for i in range(result.idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            op, parents, aux = ops[i]
            if op is None:
                continue
            vals = tuple(values[p] for p in parents)
            grads = _OPS[op][1](g, vals, values[i], aux)
            for p, pg in zip(parents, grads):
                if pg is None:
                    continue
                a = adj[p]
                adj[p] = pg if a is None else a + pg
        return adj

    def grad(self, result: Var, leaves: list[Var]) -> list[np.ndarray]:
        """Adjoint of ``result`` with respect to each leaf (zeros if unused)."""
        for leaf in leaves:
            self._check(leaf)
        adj = self.backward(result)
        out = []
        for leaf in leaves:
            g = adj[leaf.idx] if leaf.idx < len(adj) else None
            if g is None:
                g = np.zeros_like(self._values[leaf.idx])
            out.append(np.asarray(g, dtype=np.float64))
        return out

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded value from the leaves, in tape order."""
        out: list[np.ndarray] = []
        for (op, parents, aux), val in zip(self._ops, self._values):
            if op is None:
                out.append(val)
            else:
                out.append(_OPS[op][0](tuple(out[p] for p in parents), aux))
        return out


def _unary(op: str, x, aux=None):
    if isinstance(x, Var):
        return x.tape._record(op, (x.idx,), aux)
    return _OPS[op][0]((_as_const(x),), aux)


def tanh(x):
    return _unary("tanh", x)


def powc(x, exponent: float):
    """x ** exponent for a constant exponent; caller guarantees x > 0."""
    return _unary("powc", x, float(exponent))


def clamp_min(x, lo: float):
    return _unary("clamp_min", x, float(lo))


def reciprocal(x):
    return _unary("recip", x)


def mean(x):
    return _unary("mean", x)


def asum(x):
    return _unary("sum", x)


def matmul(x, w):
    """x @ w with x of shape (..., k) and w of shape (k, m)."""
    if isinstance(w, Var):
        if isinstance(x, Var):
            return x.tape._record("matmul", (x.idx, w.idx), None)
        return w.tape._record("matmul_cw", (w.idx,), _as_const(x))
    if isinstance(x, Var):
        return x.tape._record("matmul", (x.idx,), _as_const(w))
    return _fw_matmul((_as_const(x), _as_const(w)), None)
