"""Reference gradients and similarity metrics.

Two independent ground truths: a hand-written reverse pass through the
unrolled free-phase dynamics, and central finite differences where every
loss evaluation is a fresh free-phase settle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import params as P
from .dynamics import ConvergenceError, SettleConfig, residual_norm, settle


@dataclass
class OracleGradient:
    grads: dict
    method: str
    steps: int = 0
    h: float = 0.0
    final_residual: float = 0.0
    warning: str | None = None
    mask: dict | None = field(default=None, repr=False)   # sampled coordinates (finite differences)
    trusted: bool = True

    def __getitem__(self, key):
        return self.grads[key]


@dataclass
class SimilarityReport:
    per_layer: dict
    total: float

    def rows(self):
        yield "all", self.total
        yield from self.per_layer.items()


def mean_loss(model, params, x, y, cfg: SettleConfig) -> float:
    res = settle(model, params, x, y, 0.0, cfg)
    if res.diverged or (cfg.residual_tol > 0 and not res.converged):
        raise ConvergenceError(f"free settle failed (residual {res.residual_trace[-1]:.3g})")
    return float(np.mean(model.loss(params, res.state, y)))


def unrolled_adjoint_gradient(model, params, x, y, t_free: int, tol: float = 1e-10) -> OracleGradient:
    """Gradient of the batch-mean loss after ``t_free`` free steps from a zero state.

    The reverse pass runs through every step; at convergence this is the
    gradient of the loss at the free fixed point.
    """
    x = model.prepare_input(x)
    drive = model.input_drive(params, x)
    state = model.zero_state(len(x))
    states = [state]
    for _ in range(t_free):
        state = model.update(params, state, x, y, 0.0, drive=drive)
        states.append(state)
    final_res = residual_norm(states[-2], states[-1]) if t_free else np.inf
    if not np.isfinite(final_res):
        raise ConvergenceError("free trajectory diverged")
    cot, grads = model.loss_vjp(params, states[-1], y)
    for t in range(t_free - 1, -1, -1):
        cot, g = model.step_vjp(params, states[t], x, cot)
        grads = P.tree_map(np.add, grads, g)
    warning = None
    if final_res > tol:
        warning = f"trajectory not converged (last residual {final_res:.3g}); gradient is of the truncated unroll"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return OracleGradient(grads, "unrolled-adjoint", steps=t_free, final_residual=final_res, warning=warning)


def _coordinates(params, subset, rng):
    if subset is None:
        return [(k, i) for k, v in params.items() for i in range(v.size)]
    if isinstance(subset, int):
        total = P.size(params)
        picks = np.sort(rng.choice(total, size=min(subset, total), replace=False))
        names = [(k, i) for k, v in params.items() for i in range(v.size)]
        return [names[j] for j in picks]
    if isinstance(subset, dict):
        return [(k, int(i)) for k, m in subset.items() for i in np.flatnonzero(np.ravel(m))]
    return [(k, int(i)) for k, i in subset]


def finite_difference_gradient(model, params, x, y, h: float = 1e-5, subset=None,
                               cfg: SettleConfig = SettleConfig(5000, 1e-12), richardson: bool = False,
                               seed: int = 0) -> OracleGradient:
    """Central differences of the free-phase loss, one fresh settle per evaluation.

    ``subset`` is ``None`` (all coordinates), an int (that many coordinates
    sampled with ``seed``), a dict of boolean masks, or a list of
    ``(name, flat_index)`` pairs. Unsampled entries are NaN. With
    ``richardson`` each value is recomputed at ``h/2`` and the result is
    trusted only if both agree to 1e-3 relative.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"finite-difference step must lie in [1e-7, 1e-4], got {h}")
    if cfg.residual_tol > 1e-10 or cfg.noise_std > 0:
        raise ValueError("finite differences need deterministic settles at residual_tol <= 1e-10")
    x = model.prepare_input(x) if hasattr(model, "prepare_input") else x
    coords = _coordinates(params, subset, np.random.default_rng(seed))
    grads = {k: np.full(v.shape, np.nan) for k, v in params.items()}
    mask = {k: np.zeros(v.shape, dtype=bool) for k, v in params.items()}
    trusted = True

    def central(key, idx, step):
        work = P.copy(params)
        flat = work[key].reshape(-1)
        base = flat[idx]
        flat[idx] = base + step
        up = mean_loss(model, work, x, y, cfg)
        flat[idx] = base - step
        down = mean_loss(model, work, x, y, cfg)
        return (up - down) / (2 * step)

    for key, idx in coords:
        value = central(key, idx, h)
        if richardson:
            half = central(key, idx, h / 2)
            if abs(value - half) > 1e-3 * max(abs(value), abs(half), 1e-12):
                trusted = False
            value = (4 * half - value) / 3
        grads[key].reshape(-1)[idx] = value
        mask[key].reshape(-1)[idx] = True
    return OracleGradient(grads, "finite-difference", h=h, mask=mask, trusted=trusted)


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 and nb == 0:
        return float("nan")
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _grads_of(g):
    return g.grads if hasattr(g, "grads") else g


def cosine_similarity(a, b, per_layer: bool = True, mask: dict | None = None) -> SimilarityReport:
    """Cosine between two gradient-shaped objects, per layer and over everything.

    Both-zero comparisons are undefined and reported as NaN.
    """
    a, b = _grads_of(a), _grads_of(b)
    if a.keys() != b.keys():
        raise KeyError(f"parameter names differ: {list(a)} vs {list(b)}")
    for k in a:
        if np.shape(a[k]) != np.shape(b[k]):
            raise ValueError(f"shape mismatch for {k}: {np.shape(a[k])} vs {np.shape(b[k])}")
    if mask is not None:
        a = {k: np.where(mask[k], a[k], 0.0) for k in a}
        b = {k: np.where(mask[k], b[k], 0.0) for k in b}
    layers = {}
    if per_layer:
        ga, gb = P.layer_groups(a), P.layer_groups(b)
        layers = {k: _cos(np.real(ga[k]), np.real(gb[k])) for k in ga}
    return SimilarityReport(layers, _cos(np.real(P.flatten(a)), np.real(P.flatten(b))))


def relative_error(a, b, mask: dict | None = None) -> float:
    """``||a - b|| / max(||a||, ||b||)`` over (optionally masked) coordinates."""
    a, b = _grads_of(a), _grads_of(b)
    keys = list(a)
    fa = np.concatenate([np.ravel(a[k])[np.ravel(mask[k])] if mask else np.ravel(a[k]) for k in keys])
    fb = np.concatenate([np.ravel(b[k])[np.ravel(mask[k])] if mask else np.ravel(b[k]) for k in keys])
    scale = max(np.linalg.norm(fa), np.linalg.norm(fb))
    return float(np.linalg.norm(fa - fb) / scale) if scale > 0 else 0.0
