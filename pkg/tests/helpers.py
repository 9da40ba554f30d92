"""Shared finite-difference oracles for gradient checks.

Central differences at h=1e-5 on float64 keep the truncation and roundoff
error orders of magnitude below the tolerances asserted in the tests, so a
disagreement always means the analytic gradient is wrong.
"""

from __future__ import annotations

import numpy as np

from genzsl.diffmath import ParamStore


def rel_err(a, b, floor=1e-3):
    """|a - b| relative to the larger magnitude, with an absolute floor so
    near-zero pairs compare on an absolute scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f, x, h=1e-5):
    """Dense central-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2.0 * h)
    return g


def numeric_grad_params(f, params: ParamStore, h=1e-5):
    """Per-component central differences of a scalar function of a store."""
    grads = {}
    for name in params.names():
        arr = params[name]

        def slot(v, _name=name, _arr=arr):
            return f(params)

        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(params)
            flat[i] = old - h
            down = f(params)
            flat[i] = old
            gf[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def directional_derivative(f, params: ParamStore, direction, h=1e-5):
    """Central-difference derivative of f along a {name: array} direction."""
    shifted_up = ParamStore((k, v + h * direction[k]) for k, v in params.items())
    shifted_dn = ParamStore((k, v - h * direction[k]) for k, v in params.items())
    return (f(shifted_up) - f(shifted_dn)) / (2.0 * h)


def random_direction(params: ParamStore, rng) -> dict:
    d = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    norm = np.sqrt(sum((v * v).sum() for v in d.values()))
    return {k: v / norm for k, v in d.items()}
