"""Fully connected tanh network over flat parameter vectors.

Parameters live in one flat float64 array ordered layer by layer, weights
then bias within each layer; ``ParamLayout`` maps (layer, row, col) to flat
indices.  ``forward`` evaluates values only; ``forward_jet`` propagates
second-order jets through the same affine/tanh chain so the output carries
u, u_t, u_x, u_xx exactly.  Both accept either a raw parameter vector
(untaped numpy evaluation) or tape-registered layer leaves (for parameter
gradients).

Optional per-input normalization (x - shift) * scale is part of the
architecture description and is folded into the jet seeding, so all reported
derivatives are with respect to the physical coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jets import Jet2, full_pairs, jet_affine, jet_reshape, jet_tanh
from .tape import Tape, Var, matmul, register_op, tanh

CKPT_MAGIC = "stpinn-ckpt v1"


# ---------------------------------------------------------------------------
# Fused layer kernels.  The jet forward pass stacks [value, grad_0..grad_d-1,
# hess pairs...] into one (K, N, width) array per layer so each layer costs
# two tape nodes instead of a dozen elementwise ones.  The value row is
# always computed by the exact same (N, k) @ (k, m) / tanh calls as the
# values-only ``forward``, keeping the two paths bit-identical.
# ---------------------------------------------------------------------------


def _jaffine_val(X: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    K, n, _ = X.shape
    m = w.shape[1]
    Y = np.empty((K, n, m))
    np.matmul(X[0], w, out=Y[0])
    Y[0] += b
    if K > 1:
        np.matmul(X[1:].reshape((K - 1) * n, -1), w, out=Y[1:].reshape((K - 1) * n, m))
    return Y


def _jaffine_bwd(g, X, w, need_dx: bool):
    K, n, k_in = X.shape
    g2 = g.reshape(K * n, -1)
    x2 = X.reshape(K * n, k_in)
    dw = x2.T @ g2
    db = g[0].sum(axis=0)
    dx = (g2 @ w.T).reshape(X.shape) if need_dx else None
    return dx, dw, db


def _fw_jaffine(v, aux):
    return _jaffine_val(v[0], v[1], v[2])


def _bw_jaffine(g, v, out, aux):
    return _jaffine_bwd(g, v[0], v[1], True)


def _fw_jaffine_cx(v, aux):
    return _jaffine_val(aux, v[0], v[1])


def _bw_jaffine_cx(g, v, out, aux):
    _, dw, db = _jaffine_bwd(g, aux, v[0], False)
    return dw, db


def _jtanh_val(X: np.ndarray, d: int, pairs: tuple) -> np.ndarray:
    Y = np.empty_like(X)
    v = np.tanh(X[0], out=Y[0])
    s = v * v
    np.subtract(1.0, s, out=s)
    for k in range(1, 1 + d):
        np.multiply(X[k], s, out=Y[k])
    if pairs:
        c = v * s
        c *= -2.0
        tmp = np.empty_like(s)
        for m, (i, j) in enumerate(pairs):
            r = 1 + d + m
            np.multiply(X[1 + i], X[1 + j], out=Y[r])
            Y[r] *= c
            np.multiply(X[r], s, out=tmp)
            Y[r] += tmp
    return Y


def _fw_jtanh(v, aux):
    return _jtanh_val(v[0], aux[0], aux[1])


def _bw_jtanh(g, v, out, aux):
    X, Y = v[0], out
    d, pairs = aux
    K = X.shape[0]
    v0 = Y[0]
    s = v0 * v0
    np.subtract(1.0, s, out=s)
    dX = np.empty_like(X)
    for k in range(1, 1 + d):
        np.multiply(g[k], s, out=dX[k])
    # value-row adjoint: every output row depends on the pre-activation
    acc = g[1] * X[1]
    tmp = np.empty_like(s)
    for k in range(2, K):
        np.multiply(g[k], X[k], out=tmp)
        acc += tmp
    c = v0 * s
    c *= -2.0  # d s / d a = -2 v s
    acc *= c
    np.multiply(g[0], s, out=dX[0])
    dX[0] += acc
    if pairs:
        # d c / d a = 2 s (2 v^2 - s)
        dc = v0 * v0
        dc *= 2.0
        dc -= s
        dc *= s
        dc *= 2.0
        for m, (i, j) in enumerate(pairs):
            r = 1 + d + m
            gp = g[r]
            np.multiply(gp, s, out=dX[r])
            np.multiply(X[1 + i], X[1 + j], out=tmp)
            tmp *= gp
            tmp *= dc
            dX[0] += tmp
            np.multiply(gp, X[1 + j], out=tmp)
            tmp *= c
            dX[1 + i] += tmp
            np.multiply(gp, X[1 + i], out=tmp)
            tmp *= c
            dX[1 + j] += tmp
    return (dX,)


def _fw_jrow(v, aux):
    k, shape = aux
    return v[0][k].reshape(shape)


def _bw_jrow(g, v, out, aux):
    k, _ = aux
    dX = np.zeros_like(v[0])
    dX[k] = np.reshape(g, v[0].shape[1:])
    return (dX,)


register_op("jaffine", _fw_jaffine, _bw_jaffine)
register_op("jaffine_cx", _fw_jaffine_cx, _bw_jaffine_cx)
register_op("jtanh", _fw_jtanh, _bw_jtanh)
register_op("jrow", _fw_jrow, _bw_jrow)


@dataclass(frozen=True)
class MlpSpec:
    """Shape description of the fully connected network."""

    input_dim: int = 2
    hidden_layers: int = 4
    hidden_width: int = 32
    output_dim: int = 1
    activation: str = "tanh"
    in_shift: tuple | None = None
    in_scale: tuple | None = None

    def __post_init__(self):
        if self.input_dim not in (2, 3):
            raise ValueError(f"input_dim must be 2 or 3, got {self.input_dim}")
        if self.hidden_layers < 1 or self.hidden_width < 1 or self.output_dim < 1:
            raise ValueError("hidden_layers, hidden_width and output_dim must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for name in ("in_shift", "in_scale"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))
                if len(getattr(self, name)) != self.input_dim:
                    raise ValueError(f"{name} must have length {self.input_dim}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


class ParamLayout:
    """Flat-vector layout: per layer, weight block (fan_in x fan_out) then bias."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.slices = []
        off = 0
        for fi, fo in spec.layer_dims():
            w = slice(off, off + fi * fo)
            b = slice(off + fi * fo, off + fi * fo + fo)
            self.slices.append((w, b, (fi, fo)))
            off = b.stop
        self.size = off

    def weight_index(self, layer: int, row: int, col: int) -> int:
        w, _, (fi, fo) = self.slices[layer]
        if not (0 <= row < fi and 0 <= col < fo):
            raise IndexError("weight index out of range")
        return w.start + row * fo + col

    def bias_index(self, layer: int, col: int) -> int:
        _, b, (_, fo) = self.slices[layer]
        if not (0 <= col < fo):
            raise IndexError("bias index out of range")
        return b.start + col

    def unflatten(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views into theta as [(W, b)] with W of shape (fan_in, fan_out)."""
        if theta.shape != (self.size,):
            raise ValueError(f"expected parameter vector of length {self.size}")
        return [(theta[w].reshape(fi, fo), theta[b]) for w, b, (fi, fo) in self.slices]

    def flatten(self, mats: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        theta = np.empty(self.size)
        for (w, b, (fi, fo)), (wm, bv) in zip(self.slices, mats):
            theta[w] = np.asarray(wm).reshape(fi * fo)
            theta[b] = bv
        return theta


def init_params(spec: MlpSpec, seed) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layout = ParamLayout(spec)
    theta = np.zeros(layout.size)
    for w, _, (fi, fo) in layout.slices:
        lim = np.sqrt(6.0 / (fi + fo))
        theta[w] = rng.uniform(-lim, lim, fi * fo)
    return theta


def register_leaves(tape: Tape, theta: np.ndarray, spec: MlpSpec) -> list[tuple[Var, Var]]:
    """Put every layer's W and b on the tape as differentiable leaves."""
    return [(tape.leaf(w), tape.leaf(b)) for w, b in ParamLayout(spec).unflatten(theta)]


def flatten_grads(grads: list[np.ndarray], spec: MlpSpec) -> np.ndarray:
    """Pack per-leaf gradients (alternating W, b) back into flat-vector order."""
    layout = ParamLayout(spec)
    out = np.empty(layout.size)
    it = iter(grads)
    for w, b, (fi, fo) in layout.slices:
        out[w] = next(it).reshape(fi * fo)
        out[b] = next(it)
    return out


def _layers(params, spec: MlpSpec):
    if isinstance(params, np.ndarray):
        return ParamLayout(spec).unflatten(params)
    return params  # already a list of (W, b) leaves


def _normalize(coords: np.ndarray, spec: MlpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Returns (normalized coords, per-input seed scale)."""
    scale = np.ones(spec.input_dim)
    if spec.in_scale is not None:
        scale = np.asarray(spec.in_scale)
    if spec.in_shift is not None or spec.in_scale is not None:
        shift = np.asarray(spec.in_shift) if spec.in_shift is not None else 0.0
        coords = (coords - shift) * scale
    return coords, scale


def forward(params, spec: MlpSpec, coords: np.ndarray):
    """Network values at coords (N, input_dim).

    Returns shape (N,) when output_dim == 1, else (N, output_dim).  ``params``
    is a flat vector (numpy path) or tape-registered layers (taped path).
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if coords.shape[1] != spec.input_dim:
        raise ValueError(f"expected coords with {spec.input_dim} columns")
    layers = _layers(params, spec)
    a, _ = _normalize(coords, spec)
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        a = matmul(a, w) + b
        if k < last:
            a = tanh(a)
    if spec.output_dim == 1:
        a = a.reshape((coords.shape[0],)) if hasattr(a, "reshape") else np.reshape(a, (-1,))
    return a


def _input_stack(coords: np.ndarray, spec: MlpSpec, pairs: tuple) -> np.ndarray:
    """Seeded input rows: [coords, e_0 * scale_0, ..., zero hess rows]."""
    n, d = coords.shape
    xs, scale = _normalize(coords, spec)
    X = np.zeros((1 + d + len(pairs), n, d))
    X[0] = xs
    for k in range(d):
        X[1 + k, :, k] = scale[k]
    return X


def forward_jet(params, spec: MlpSpec, coords: np.ndarray, pairs: tuple | None = None) -> Jet2:
    """Jet-valued forward pass: value, input gradient and Hessian per point.

    ``pairs`` selects which Hessian components to propagate (default: all,
    i.e. the full symmetric matrix).  The value component follows the exact
    same operation sequence as ``forward``.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if coords.shape[1] != spec.input_dim:
        raise ValueError(f"expected coords with {spec.input_dim} columns")
    d = spec.input_dim
    if pairs is None:
        pairs = full_pairs(d)
    pairs = tuple(pairs)
    layers = _layers(params, spec)
    X = _input_stack(coords, spec, pairs)
    n = coords.shape[0]
    shape = (n,) if spec.output_dim == 1 else (n, spec.output_dim)
    taped = isinstance(layers[0][0], Var)
    if taped:
        t = layers[0][0].tape
        cur = t._record("jaffine_cx", (layers[0][0].idx, layers[0][1].idx), X)
        for w, b in layers[1:]:
            cur = t.apply("jtanh", (cur,), (d, pairs))
            cur = t.apply("jaffine", (cur, w, b))

        def row(k):
            return t._record("jrow", (cur.idx,), (k, shape))

    else:
        cur = _jaffine_val(X, *layers[0])
        for w, b in layers[1:]:
            cur = _jtanh_val(cur, d, pairs)
            cur = _jaffine_val(cur, w, b)

        def row(k):
            return cur[k].reshape(shape)

    return Jet2(
        row(0),
        tuple(row(1 + i) for i in range(d)),
        {p: row(1 + d + m) for m, p in enumerate(pairs)},
    )


def forward_jet_reference(params, spec: MlpSpec, coords: np.ndarray,
                          pairs: tuple | None = None) -> Jet2:
    """Layer-by-layer jet propagation via the generic Jet2 ops.

    Slow unfused twin of ``forward_jet``; kept as an independent
    cross-validation path for tests.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    d = spec.input_dim
    if pairs is None:
        pairs = full_pairs(d)
    layers = _layers(params, spec)
    xs, scale = _normalize(coords, spec)
    grad = tuple(scale[k] * np.eye(d)[k][None, :] for k in range(d))
    jet = Jet2(xs, grad, {p: None for p in pairs})
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        jet = jet_affine(jet, w, b)
        if k < last:
            jet = jet_tanh(jet)
    if spec.output_dim == 1:
        jet = jet_reshape(jet, (coords.shape[0],))
    return jet


def save_checkpoint(path, theta: np.ndarray, spec: MlpSpec) -> None:
    """Versioned header, spec as key=value lines, '---', raw little-endian f64."""
    lines = [
        CKPT_MAGIC,
        f"input_dim={spec.input_dim}",
        f"hidden_layers={spec.hidden_layers}",
        f"hidden_width={spec.hidden_width}",
        f"output_dim={spec.output_dim}",
        f"activation={spec.activation}",
    ]
    if spec.in_shift is not None:
        lines.append("in_shift=" + ",".join(repr(x) for x in spec.in_shift))
    if spec.in_scale is not None:
        lines.append("in_scale=" + ",".join(repr(x) for x in spec.in_scale))
    lines.append("---")
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(theta, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[np.ndarray, MlpSpec]:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, rest = blob.partition(b"---\n")
    lines = head.decode("ascii").splitlines()
    if not lines or lines[0] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a {CKPT_MAGIC!r} file")
    kv = dict(line.split("=", 1) for line in lines[1:] if line)
    spec = MlpSpec(
        input_dim=int(kv["input_dim"]),
        hidden_layers=int(kv["hidden_layers"]),
        hidden_width=int(kv["hidden_width"]),
        output_dim=int(kv["output_dim"]),
        activation=kv.get("activation", "tanh"),
        in_shift=tuple(float(x) for x in kv["in_shift"].split(",")) if "in_shift" in kv else None,
        in_scale=tuple(float(x) for x in kv["in_scale"].split(",")) if "in_scale" in kv else None,
    )
    theta = np.frombuffer(rest, dtype="<f8").astype(np.float64)
    if theta.shape != (spec.param_count,):
        raise ValueError(f"{path}: expected {spec.param_count} parameters, found {theta.size}")
    return theta, spec
