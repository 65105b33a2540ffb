"""Softmax pooling with temperature and its exact unpooling.

For a window ``R`` the pooled value is ``y = sum_i w_i x_i`` with
``w = softmax(x / tau)``. The map is holomorphic in every ``x_i``.

Unpooling is the transpose of the pooling Jacobian at the cached forward
input,

    dy/dx_i = w_i * (1 + (x_i - y) / tau),

so that the feedback term of a conv layer is exactly the gradient of the
layer's coupling energy. Redistribution by the forward weights alone
(``exact=False``) drops the ``(x_i - y) / tau`` correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .activations import softmax


@dataclass
class PoolCache:
    windows: np.ndarray   # (B, C, Ho, Wo, k*k) forward inputs
    weights: np.ndarray   # softmax weights, same shape
    pooled: np.ndarray    # (B, C, Ho, Wo)
    in_shape: tuple
    window: int
    stride: int
    tau: float

    @property
    def slopes(self):
        """Per-cell Jacobian entries dy/dx_i."""
        return self.weights * (1.0 + (self.windows - self.pooled[..., None]) / self.tau)


def pooled_size(size: int, window: int, stride: int) -> int:
    if size < window or (size - window) % stride:
        raise ValueError(f"window {window} with stride {stride} does not tile extent {size}")
    return (size - window) // stride + 1


def _gather(x, window, stride):
    v = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    return v.reshape(v.shape[:4] + (window * window,))


def _scatter(contrib, in_shape, window, stride):
    b, c, ho, wo, _ = contrib.shape
    contrib = contrib.reshape(b, c, ho, wo, window, window)
    out = np.zeros(in_shape, dtype=contrib.dtype)
    for i in range(window):
        for j in range(window):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib[..., i, j]
    return out


def softmax_pool(x, window: int = 2, stride: int = 2, tau: float = 1.0):
    """Pool a ``(B, C, H, W)`` tensor; returns ``(pooled, cache)``."""
    if tau <= 0:
        raise ValueError(f"pooling temperature must be positive, got {tau}")
    x = np.asarray(x)
    pooled_size(x.shape[2], window, stride)
    pooled_size(x.shape[3], window, stride)
    windows = _gather(x, window, stride)
    weights = softmax(windows / tau, axis=-1)
    pooled = np.sum(weights * windows, axis=-1)
    return pooled, PoolCache(windows, weights, pooled, x.shape, window, stride, tau)


def softmax_unpool(g, cache: PoolCache, exact: bool = True):
    """Spread pooled-space values ``g`` back over each window."""
    if cache is None:
        raise ValueError("unpooling needs the cache of the matching forward pool")
    factors = cache.slopes if exact else cache.weights
    return _scatter(factors * np.asarray(g)[..., None], cache.in_shape, cache.window, cache.stride)


def pool_jvp(cache: PoolCache, v):
    """Directional derivative of the pooling at the cached input along ``v``."""
    return np.sum(cache.slopes * _gather(v, cache.window, cache.stride), axis=-1)


def pool_curvature_vjp(cache: PoolCache, a, v):
    """Gradient w.r.t. the pool input of ``<a, pool_jvp(cache, v)>``."""
    nu = _gather(v, cache.window, cache.stride)
    w, slopes = cache.weights, cache.slopes
    m_slope = np.sum(slopes * nu, axis=-1, keepdims=True)
    m_w = np.sum(w * nu, axis=-1, keepdims=True)
    local = (np.asarray(a)[..., None] / cache.tau) * (nu * (slopes + w) - w * m_slope - slopes * m_w)
    return _scatter(local, cache.in_shape, cache.window, cache.stride)
