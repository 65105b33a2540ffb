"""Generic Hopfield energy and readout loss for small fully connected nets."""

from __future__ import annotations

import numpy as np

from .activations import get_activation

TARGET_EPS = 1e-12


def hopfield_energy(weights, biases, s, activation: str = "shifted_sigmoid"):
    """``1/2 sum s_i^2 - 1/2 sum_{i!=j} w_ij act(s_i) act(s_j) - sum b_i act(s_i)``.

    ``weights`` is a full ``n x n`` matrix; its diagonal is ignored.
    """
    act, _ = get_activation(activation)
    w = np.array(weights, dtype=np.result_type(weights, float), copy=True)
    np.fill_diagonal(w, 0.0)
    a = act(np.asarray(s))
    return 0.5 * np.sum(s * s) - 0.5 * a @ w @ a - np.dot(biases, a)


def hopfield_weight_grad(s, activation: str = "shifted_sigmoid"):
    """Derivative of :func:`hopfield_energy` w.r.t. the tied symmetric weight ``w_ij = w_ji``."""
    act, _ = get_activation(activation)
    a = act(np.asarray(s))
    g = -np.outer(a, a)
    np.fill_diagonal(g, 0.0)
    return g


def cross_entropy(s_out, y):
    """Per-sample ``-y . log(s_out)`` for one-hot ``y``."""
    s_out, y = np.atleast_2d(s_out), np.atleast_2d(y)
    target = np.sum(s_out * y, axis=1)
    if np.any(np.abs(target) < TARGET_EPS):
        raise ValueError("readout is (numerically) zero on the target class")
    return -np.log(target)


def total_energy(energy, loss, beta):
    return energy + beta * loss
