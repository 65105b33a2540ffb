"""Holomorphic activation functions.

All functions accept real or complex arrays. Real inputs go through a
numerically stable real path; complex inputs use the complex exponential.
Entries that sit within ``POLE_EPS`` of a pole are returned as NaN so the
divergence check of the dynamics picks them up.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

POLE_EPS = 1e-9


def _logistic(z):
    """1 / (1 + e^{-z}) with NaN at (near-)poles."""
    if not np.iscomplexobj(z):
        return expit(z)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        denom = 1.0 + np.exp(-z)
        out = 1.0 / denom
    near_pole = np.abs(denom) < POLE_EPS
    if np.any(near_pole):
        out = np.where(near_pole, np.nan, out)
    return out


def _logistic_prime(z):
    s = _logistic(z)
    return s * (1.0 - s)


def shifted_sigmoid(z):
    return _logistic(4.0 * z - 2.0)


def shifted_sigmoid_prime(z):
    return 4.0 * _logistic_prime(4.0 * z - 2.0)


def dsilu(z):
    return 0.5 * z * _logistic(z) + (1.0 - 0.5 * z) * _logistic(z - 2.0)


def dsilu_prime(z):
    a, b = _logistic(z), _logistic(z - 2.0)
    return 0.5 * a + 0.5 * z * a * (1.0 - a) - 0.5 * b + (1.0 - 0.5 * z) * b * (1.0 - b)


def identity(z):
    return z


def identity_prime(z):
    return np.ones_like(z)


ACTIVATIONS = {
    "shifted_sigmoid": (shifted_sigmoid, shifted_sigmoid_prime),
    "dsilu": (dsilu, dsilu_prime),
    "identity": (identity, identity_prime),
}


def get_activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def softmax(z, axis: int = -1):
    """Softmax that stays holomorphic for complex input.

    Shifting by the (real) maximum of the real parts leaves the value
    unchanged and keeps exponentials bounded.
    """
    shift = np.max(np.real(z), axis=axis, keepdims=True)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        e = np.exp(z - shift)
        total = np.sum(e, axis=axis, keepdims=True)
        out = e / total
    near_pole = np.abs(total) < POLE_EPS
    if np.any(near_pole):
        out = np.where(near_pole, np.nan, out)
    return out
