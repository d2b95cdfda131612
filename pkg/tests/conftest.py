"""Shared test helpers: finite-difference oracles and small fixtures."""

import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Central first difference of a scalar function of one scalar."""
    return (f(x + h) - f(x - h)) / (2.0 * h)


def central_diff2(f, x, h=1e-4):
    """Central second difference of a scalar function of one scalar."""
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def grad_fd(f, theta, indices=None, h=1e-5):
    """Central-difference gradient of f(theta) over selected flat indices."""
    theta = np.asarray(theta, dtype=np.float64)
    if indices is None:
        indices = range(theta.size)
    out = {}
    for k in indices:
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h
        tm[k] -= h
        out[k] = (f(tp) - f(tm)) / (2.0 * h)
    return out


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
