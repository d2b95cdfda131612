"""Second-order jets: values carrying exact first/second input derivatives.

A ``Jet2`` bundles a value with its gradient and Hessian with respect to a
small set of distinguished inputs (the network's spatiotemporal coordinates,
d <= 3).  Components are either plain float64 numpy arrays or tape ``Var``
handles; all arithmetic goes through operators shared by both backends, so
the same jet code runs taped (for parameter gradients) or untaped (for
values-only scoring).

Hessians are stored as a dict over tracked index pairs (i, j) with i <= j;
symmetry is by construction.  A ``None`` entry is an exact structural zero,
which keeps freshly seeded jets cheap.  Propagating only a subset of pairs
(e.g. just (x, x) when a residual needs u_xx alone) is supported by seeding
with that subset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import matmul, tanh

__all__ = ["Jet2", "full_pairs", "jet_seed", "jet_add", "jet_sub", "jet_scale",
           "jet_shift", "jet_mul", "jet_tanh", "jet_affine", "jet_reshape"]


def full_pairs(d: int) -> tuple:
    return tuple((i, j) for i in range(d) for j in range(i, d))


def _zadd(x, y):
    if x is None:
        return y
    if y is None:
        return x
    return x + y


def _zmul(x, c):
    return None if x is None else x * c


@dataclass
class Jet2:
    """Value plus exact gradient/Hessian w.r.t. distinguished inputs."""

    val: object
    grad: tuple
    hess: dict

    @property
    def dim(self) -> int:
        return len(self.grad)

    @property
    def pairs(self) -> tuple:
        return tuple(self.hess.keys())

    def hess_at(self, i: int, j: int):
        """Symmetric Hessian lookup; structural zeros come back as 0.0."""
        key = (i, j) if i <= j else (j, i)
        h = self.hess[key]
        return 0.0 if h is None else h

    def hess_full(self) -> np.ndarray:
        """Materialize the full symmetric d x d Hessian (numpy jets only)."""
        d = self.dim
        base = np.asarray(self.val, dtype=np.float64)
        out = np.zeros((d, d) + base.shape)
        for i in range(d):
            for j in range(d):
                out[i, j] = self.hess_at(i, j)
        return out


def _check_compatible(a: Jet2, b: Jet2) -> None:
    if a.dim != b.dim or set(a.hess) != set(b.hess):
        raise ValueError("jets track different input bases or Hessian pairs")


def jet_seed(values, pairs: tuple | None = None) -> list[Jet2]:
    """One seeded jet per distinguished input: grad = e_i, hess = 0."""
    values = np.asarray(values, dtype=np.float64)
    d = len(values)
    if d not in (2, 3):
        raise ValueError(f"jets support 2 or 3 distinguished inputs, got {d}")
    if pairs is None:
        pairs = full_pairs(d)
    jets = []
    for k in range(d):
        grad = tuple(1.0 if i == k else 0.0 for i in range(d))
        jets.append(Jet2(values[k], grad, {p: None for p in pairs}))
    return jets


def jet_add(a: Jet2, b: Jet2) -> Jet2:
    _check_compatible(a, b)
    return Jet2(
        a.val + b.val,
        tuple(ga + gb for ga, gb in zip(a.grad, b.grad)),
        {p: _zadd(a.hess[p], b.hess[p]) for p in a.hess},
    )


def jet_sub(a: Jet2, b: Jet2) -> Jet2:
    _check_compatible(a, b)
    return Jet2(
        a.val - b.val,
        tuple(ga - gb for ga, gb in zip(a.grad, b.grad)),
        {p: _zadd(a.hess[p], _zmul(b.hess[p], -1.0)) for p in a.hess},
    )


def jet_scale(a: Jet2, c: float) -> Jet2:
    return Jet2(a.val * c, tuple(g * c for g in a.grad),
                {p: _zmul(h, c) for p, h in a.hess.items()})


def jet_shift(a: Jet2, c: float) -> Jet2:
    return Jet2(a.val + c, a.grad, dict(a.hess))


def jet_mul(a: Jet2, b: Jet2) -> Jet2:
    """Product jet by the second-order Leibniz rule."""
    _check_compatible(a, b)
    val = a.val * b.val
    grad = tuple(ga * b.val + a.val * gb for ga, gb in zip(a.grad, b.grad))
    hess = {}
    for (i, j), _ in a.hess.items():
        h = _zadd(_zmul(a.hess[(i, j)], b.val), _zmul(b.hess[(i, j)], a.val))
        cross = a.grad[i] * b.grad[j] + a.grad[j] * b.grad[i]
        hess[(i, j)] = _zadd(h, cross)
    return Jet2(val, grad, hess)


def jet_tanh(a: Jet2) -> Jet2:
    """tanh jet: grad (1-v^2) g, hess (1-v^2) h - 2 v (1-v^2) g_i g_j."""
    v = tanh(a.val)
    s = 1.0 - v * v
    grad = tuple(s * g for g in a.grad)
    c = (-2.0 * v) * s
    hess = {}
    for (i, j), h in a.hess.items():
        outer = c * (a.grad[i] * a.grad[j])
        hess[(i, j)] = outer if h is None else s * h + outer
    return Jet2(v, grad, hess)


def jet_affine(a: Jet2, w, b=None) -> Jet2:
    """Right-multiply every jet component by w (k, m); add bias to the value."""
    val = matmul(a.val, w)
    if b is not None:
        val = val + b
    grad = tuple(matmul(g, w) for g in a.grad)
    hess = {p: (None if h is None else matmul(h, w)) for p, h in a.hess.items()}
    return Jet2(val, grad, hess)


def jet_reshape(a: Jet2, shape: tuple) -> Jet2:
    def _r(x):
        if x is None:
            return None
        return x.reshape(shape) if hasattr(x, "reshape") else np.reshape(x, shape)

    return Jet2(_r(a.val), tuple(_r(g) for g in a.grad),
                {p: _r(h) for p, h in a.hess.items()})
