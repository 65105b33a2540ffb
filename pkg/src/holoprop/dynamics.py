"""Fixed-point settling under real or complex nudging."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model.network import NetworkState
from .tensor import DivergenceError

DIVERGENCE_SENTINEL = 1e6
PARAM_TAG = 11          # rng tag for parameter initialisation


def make_rng(seed: int, *tags: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``seed`` and integer tags."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, tags)])))


@dataclass(frozen=True)
class NudgePath:
    """``n_points`` teaching values evenly spaced on the circle of radius ``radius``."""

    radius: float
    n_points: int
    phase: float = 0.0

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.n_points < 2:
            raise ValueError("a nudge path needs at least 2 points")

    @property
    def angles(self) -> np.ndarray:
        return self.phase + 2 * np.pi * np.arange(self.n_points) / self.n_points

    @property
    def points(self) -> np.ndarray:
        return self.radius * np.exp(1j * self.angles)

    def at(self, t, period):
        """Continuous parameterisation ``|beta| exp(2 i pi t / T)``."""
        return self.radius * np.exp(1j * (self.phase + 2 * np.pi * np.asarray(t) / period))


@dataclass(frozen=True)
class SettleConfig:
    """Settling budget. ``max_steps`` is T_free; ``nudge_steps`` (T_nudge) defaults to it."""

    max_steps: int = 200
    residual_tol: float = 1e-8
    warm_start: bool = True
    noise_std: float = 0.0
    rng_seed: int = 0
    nudge_steps: int | None = None

    def __post_init__(self):
        if self.max_steps < 1 or (self.nudge_steps is not None and self.nudge_steps < 1):
            raise ValueError("max_steps and nudge_steps must be >= 1")
        if self.residual_tol < 0 or self.noise_std < 0:
            raise ValueError("residual_tol and noise_std must be non-negative")

    @property
    def nudge(self) -> "SettleConfig":
        """Config for nudged phases."""
        return replace(self, max_steps=self.nudge_steps or self.max_steps, nudge_steps=None)


class ConvergenceError(DivergenceError):
    """A settle ended without reaching a fixed point."""


@dataclass
class SettleResult:
    state: NetworkState
    residual_trace: np.ndarray
    converged: bool
    steps_used: int
    residuals: np.ndarray = field(repr=False)        # final per-sample residuals
    diverged_mask: np.ndarray = field(repr=False)    # per-sample divergence

    @property
    def diverged(self) -> bool:
        return bool(np.any(self.diverged_mask))


def residual_norm(s_prev, s_next) -> float:
    """Euclidean norm of the change between two states (lists of layers or arrays)."""
    if isinstance(s_prev, NetworkState):
        s_prev, s_next = s_prev.layers, s_next.layers
    if not isinstance(s_prev, (list, tuple)):
        s_prev, s_next = [s_prev], [s_next]
    total = sum(float(np.sum(np.abs(np.asarray(b) - np.asarray(a)) ** 2)) for a, b in zip(s_prev, s_next))
    return float(np.sqrt(total)) if np.isfinite(total) else np.inf


def per_sample_residual(prev, new):
    with np.errstate(invalid="ignore", over="ignore"):
        sq = sum(np.sum(np.abs(b - a).reshape(len(a), -1) ** 2, axis=1) for a, b in zip(prev, new))
    return np.where(np.isfinite(sq), np.sqrt(sq), np.inf)


def per_sample_blowup(layers):
    bad = np.zeros(len(layers[0]), dtype=bool)
    with np.errstate(invalid="ignore"):
        for s in layers:
            mag = np.abs(s).reshape(len(s), -1)
            bad |= ~np.all(np.isfinite(mag) & (mag <= DIVERGENCE_SENTINEL), axis=1)
    return bad


def step(model, params, state: NetworkState, x, y, beta=0.0, noise_std: float = 0.0, rng=None, drive=None):
    """One synchronous layer-wise update."""
    return model.update(params, state, x, y, beta, drive=drive, noise_std=noise_std, rng=rng)


def settle(model, params, x, y, beta=0.0, cfg: SettleConfig = SettleConfig(), init_state=None,
           rng: np.random.Generator | None = None, drive=None) -> SettleResult:
    """Iterate :func:`step` until the residual drops to ``cfg.residual_tol`` or ``cfg.max_steps``.

    ``beta`` may be a scalar or one value per sample. With ``residual_tol == 0``
    the settle runs exactly ``max_steps`` steps. Diverged samples are recorded,
    never raised.
    """
    complex_beta = np.iscomplexobj(beta)
    if init_state is None:
        state = model.zero_state(len(x), dtype=np.complex128 if complex_beta else np.float64)
    else:
        state = init_state.copy()
        if complex_beta:
            state = NetworkState([s.astype(np.complex128) for s in state.layers], state.x)
    if cfg.noise_std > 0 and rng is None:
        rng = make_rng(cfg.rng_seed)
    if drive is None:
        drive = model.input_drive(params, x)
    trace = []
    diverged = np.zeros(len(x), dtype=bool)
    res = np.full(len(x), np.inf)
    converged = False
    steps = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for steps in range(1, cfg.max_steps + 1):
            new = step(model, params, state, x, y, beta, cfg.noise_std, rng, drive)
            res = per_sample_residual(state.layers, new.layers)
            diverged |= per_sample_blowup(new.layers)
            res[diverged] = np.inf
            state = new
            trace.append(float(np.max(res)))
            if diverged.all():
                break
            if cfg.residual_tol > 0 and not diverged.any() and trace[-1] <= cfg.residual_tol:
                converged = True
                break
    if cfg.residual_tol == 0 and not diverged.any():
        converged = trace[-1] <= cfg.residual_tol
    return SettleResult(state, np.asarray(trace), converged, steps, res, diverged)
