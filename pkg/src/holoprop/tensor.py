"""Dense complex tensor arithmetic shared by every other module.

Tensors are plain numpy arrays (``complex128`` or ``float64``). Real arrays
stay real through every operation here, so a free-phase computation never
picks up spurious imaginary parts.

Conventions
-----------
* Layout is row-major with a leading batch axis where one applies.
* ``conv2d`` is a cross-correlation (no kernel flip), input ``(B, C, H, W)``
  or ``(C, H, W)``, kernel ``(C_out, C_in, kh, kw)``.
* ``conv2d_transpose`` is the exact adjoint of ``conv2d`` under the bilinear
  pairing ``<a, b> = sum(a * b)`` (no conjugation), which is what the
  holomorphic dynamics need.
* A tensor is *diverged* when any component is non-finite.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """Raised when a computation produced non-finite values."""


def _as_array(a):
    return a if isinstance(a, np.ndarray) else np.asarray(a)


def _check_broadcast(a, b):
    a, b = _as_array(a), _as_array(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape == b.shape:
        return a, b
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def cadd(a, b):
    a, b = _check_broadcast(a, b)
    return a + b


def cmul(a, b):
    a, b = _check_broadcast(a, b)
    return a * b


def cscale(a, s):
    s = _as_array(s)
    if s.ndim != 0:
        raise ShapeError(f"scale must be a scalar, got shape {s.shape}")
    return _as_array(a) * s


def cexp(z):
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp(z)


def matmul(a, b):
    a, b = _as_array(a), _as_array(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} and {b.shape}")
    return a @ b


def mixed_matmul(a, b):
    """``a @ b`` for complex ``a`` and real ``b`` with one real BLAS call.

    numpy upcasts ``b`` to complex otherwise, which roughly doubles the cost.
    """
    if not np.iscomplexobj(a) or np.iscomplexobj(b) or a.ndim != 2:
        return a @ b
    n = a.shape[0]
    r = np.concatenate([a.real, a.imag]) @ b
    out = np.empty((n, r.shape[1]), dtype=np.result_type(a.dtype, b.dtype))
    out.real = r[:n]
    out.imag = r[n:]
    return out


def is_real(a) -> bool:
    a = _as_array(a)
    return not np.iscomplexobj(a) or not np.any(a.imag)


def is_diverged(a) -> bool:
    return not np.all(np.isfinite(a))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0:
        raise ShapeError(f"kernel {kernel} does not fit input {size} with padding {padding}")
    return span // stride + 1


def _batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (C, H, W) or (B, C, H, W), got {x.shape}")
    return x, False


def conv2d(w, x, stride: int = 1, padding: int = 0):
    w, x = _as_array(w), _as_array(x)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x, squeeze = _batched(x)
    c_out, c_in, kh, kw = w.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"kernel expects {c_in} input channels, input has {x.shape[1]}")
    ho = conv_output_size(x.shape[2], kh, stride, padding)
    wo = conv_output_size(x.shape[3], kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((x.shape[0], c_out, ho, wo), dtype=np.result_type(w, x))
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            out += np.tensordot(patch, w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    return out[0] if squeeze else out


def conv2d_transpose(w, y, in_hw: tuple[int, int], stride: int = 1, padding: int = 0):
    """Adjoint of :func:`conv2d`; ``in_hw`` is the spatial size of the original input."""
    w, y = _as_array(w), _as_array(y)
    y, squeeze = _batched(y)
    c_out, c_in, kh, kw = w.shape
    if y.shape[1] != c_out:
        raise ShapeError(f"kernel produces {c_out} channels, got {y.shape[1]}")
    h, wd = in_hw
    ho, wo = y.shape[2], y.shape[3]
    if (conv_output_size(h, kh, stride, padding), conv_output_size(wd, kw, stride, padding)) != (ho, wo):
        raise ShapeError(f"output {y.shape[2:]} inconsistent with input size {in_hw}")
    xp = np.zeros((y.shape[0], c_in, h + 2 * padding, wd + 2 * padding), dtype=np.result_type(w, y))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.tensordot(
                y, w[:, :, i, j], axes=([1], [0])
            ).transpose(0, 3, 1, 2)
    if padding:
        xp = xp[:, :, padding:padding + h, padding:padding + wd]
    return xp[0] if squeeze else xp


def conv2d_weight_grad(x, g, kernel_hw: tuple[int, int], stride: int = 1, padding: int = 0):
    """d<g, conv2d(w, x)>/dw, summed over the batch."""
    x, _ = _batched(_as_array(x))
    g, _ = _batched(_as_array(g))
    kh, kw = kernel_hw
    ho, wo = g.shape[2], g.shape[3]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((g.shape[1], x.shape[1], kh, kw), dtype=np.result_type(x, g))
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            out[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
    return out
