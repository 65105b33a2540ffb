"""Parameter containers.

Parameters are ordered ``dict[str, ndarray]`` keyed ``W1, b1, W2, b2, ...``.
Gradients and estimates use the same layout, so every helper here works on
any of them.
"""

from __future__ import annotations

import re
from typing import Callable

import numpy as np

Params = dict  # str -> np.ndarray, insertion ordered

_LAYER_RE = re.compile(r"^[A-Za-z_]+(\d+)$")


def tree_map(fn: Callable, first: Params, *rest: Params) -> Params:
    for other in rest:
        if other.keys() != first.keys():
            raise KeyError(f"parameter names differ: {list(first)} vs {list(other)}")
    return {k: fn(first[k], *(o[k] for o in rest)) for k in first}


def zeros_like(params: Params, dtype=None) -> Params:
    return {k: np.zeros_like(v, dtype=dtype or v.dtype) for k, v in params.items()}


def copy(params: Params) -> Params:
    return {k: np.array(v, copy=True) for k, v in params.items()}


def flatten(params: Params) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([np.ravel(v) for v in params.values()])


def unflatten(vector: np.ndarray, like: Params) -> Params:
    out, offset = {}, 0
    for k, v in like.items():
        out[k] = np.asarray(vector[offset:offset + v.size]).reshape(v.shape)
        offset += v.size
    if offset != len(vector):
        raise ValueError(f"vector has {len(vector)} entries, parameters need {offset}")
    return out


def size(params: Params) -> int:
    return sum(v.size for v in params.values())


def layer_of(name: str) -> str:
    m = _LAYER_RE.match(name)
    return f"layer{m.group(1)}" if m else name


def layer_groups(params: Params) -> dict[str, np.ndarray]:
    """Concatenate the parameters of each layer into one vector."""
    groups: dict[str, list] = {}
    for k, v in params.items():
        groups.setdefault(layer_of(k), []).append(np.ravel(v))
    return {k: np.concatenate(v) for k, v in groups.items()}


def realify(params: Params) -> tuple[Params, float]:
    """Real part of a complex estimate and the largest discarded imaginary magnitude."""
    imag = max((float(np.max(np.abs(np.imag(v)))) for v in params.values() if v.size), default=0.0)
    return {k: np.real(v).astype(np.float64) for k, v in params.items()}, imag
