"""Gradient estimators built from settled (or continuously driven) states.

All estimators return a :class:`GradientEstimate` with real tensors shaped
like the parameters. Complex intermediate estimates are realified and the
discarded imaginary magnitude is kept as a health metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import params as P
from .dynamics import ConvergenceError, NudgePath, SettleConfig, SettleResult, make_rng, settle
from .tensor import DivergenceError

FREE_TAG, NUDGE_TAG, ONLINE_TAG = 0, 1, 2


@dataclass
class GradientEstimate:
    grads: dict
    kind: str
    n_points: int = 0
    radius: float = 0.0
    imag_residual: float = 0.0        # max |Im| dropped by realification
    imag_ratio: float = 0.0           # ||Im|| / ||Re|| of the complex estimate
    converged: list = field(default_factory=list)
    extras: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key):
        return self.grads[key]


@dataclass(frozen=True)
class OnlineConfig:
    """Three-timescale schedule: oscillation period and plasticity interval in steps."""

    t_osc: int
    t_plas: int
    total_periods: int
    radius: float
    aligned: bool = True
    phase: float = 0.0

    def __post_init__(self):
        if not 1 <= self.t_osc <= self.t_plas:
            raise ValueError(f"need 1 <= t_osc <= t_plas, got t_osc={self.t_osc}, t_plas={self.t_plas}")
        if self.aligned and self.t_plas % self.t_osc:
            raise ValueError("aligned plasticity needs t_plas to be a multiple of t_osc")
        if self.total_periods < 1 or self.radius <= 0:
            raise ValueError("total_periods must be >= 1 and radius > 0")


@dataclass
class NudgeTraces:
    """Local gradients sampled at every point of a nudge path."""

    path: NudgePath
    grads: list                       # complex Params per beta_k
    results: list                     # SettleResult per beta_k
    free: SettleResult | None = None


@dataclass
class BiasProbe:
    slope: float
    radii: np.ndarray
    errors: np.ndarray


def _finish(raw: dict, kind: str, **kw) -> GradientEstimate:
    grads, imag = P.realify(raw)
    re = np.linalg.norm(P.flatten(grads))
    im = np.linalg.norm(np.imag(P.flatten(raw)))
    ratio = im / re if re > 0 else (0.0 if im == 0 else np.inf)
    return GradientEstimate(grads, kind, imag_residual=imag, imag_ratio=float(ratio), **kw)


def _check(result: SettleResult, cfg: SettleConfig, what: str, beta=None):
    if result.diverged:
        err = DivergenceError(f"{what} diverged" + (f" at beta={beta:.6g}" if beta is not None else ""))
        err.beta = beta
        raise err
    if cfg.residual_tol > 0 and not result.converged:
        raise ConvergenceError(f"{what} did not reach residual {cfg.residual_tol:g} "
                               f"in {result.steps_used} steps (last {result.residual_trace[-1]:.3g})")


def local_grad(model, params, state, x, y, beta=0.0):
    """dF/dtheta at ``state`` (complex when the state is), averaged over the batch."""
    return model.param_grad(params, state, x, y, beta)


def _rng(cfg: SettleConfig, *tags):
    return make_rng(cfg.rng_seed, *tags) if cfg.noise_std > 0 else None


def free_phase(model, params, x, y, cfg: SettleConfig, tags: tuple = (), drive=None) -> SettleResult:
    res = settle(model, params, x, y, 0.0, cfg, rng=_rng(cfg, *tags, FREE_TAG), drive=drive)
    _check(res, cfg, "free phase")
    return res


def classic_ep(model, params, x, y, beta: float, cfg: SettleConfig = SettleConfig(),
               realizations: int = 1, tags: tuple = ()) -> GradientEstimate:
    """One-sided finite difference of dF/dtheta between a nudged and the free fixed point.

    With ``realizations > 1`` both phases are repeated under independent noise
    and their local gradients averaged before differencing.
    """
    beta = float(np.real_if_close(beta))
    if not beta > 0:
        raise ValueError(f"classic EP needs a real beta > 0, got {beta}")
    drive = model.input_drive(params, x)
    g_free, g_nudge, flags = None, None, []
    for r in range(realizations):
        free = free_phase(model, params, x, y, cfg, (*tags, r), drive)
        nudged = settle(model, params, x, y, beta, cfg.nudge, init_state=free.state,
                        rng=_rng(cfg, *tags, r, NUDGE_TAG), drive=drive)
        _check(nudged, cfg, "nudged phase", beta)
        gf = local_grad(model, params, free.state, x, y, 0.0)
        gn = local_grad(model, params, nudged.state, x, y, beta)
        g_free = gf if g_free is None else P.tree_map(np.add, g_free, gf)
        g_nudge = gn if g_nudge is None else P.tree_map(np.add, g_nudge, gn)
        flags += [free.converged, nudged.converged]
    raw = P.tree_map(lambda a, b: (a - b) / (beta * realizations), g_nudge, g_free)
    return _finish(raw, "classic", n_points=1, radius=beta, converged=flags)


def collect_traces(model, params, x, y, path: NudgePath, cfg: SettleConfig = SettleConfig(),
                   tags: tuple = (), free: SettleResult | None = None) -> NudgeTraces:
    """Settle at every ``beta_k`` of ``path`` and record the local gradient there.

    ``cfg.warm_start`` chains the settles (``beta_0`` from the free fixed
    point, ``beta_k`` from ``beta_{k-1}``); otherwise each one starts from
    a zero state.
    """
    drive = model.input_drive(params, x)
    if free is None:
        free = free_phase(model, params, x, y, cfg, tags, drive)
    nudge_cfg = cfg.nudge
    state = free.state
    grads, results = [], []
    for k, beta in enumerate(path.points):
        init = state if cfg.warm_start else None
        res = settle(model, params, x, y, beta, nudge_cfg, init_state=init,
                     rng=_rng(cfg, *tags, NUDGE_TAG, k), drive=drive)
        try:
            _check(res, nudge_cfg, f"nudged settle k={k}", beta)
        except DivergenceError as err:
            err.index = k
            raise
        state = res.state
        grads.append(local_grad(model, params, state, x, y, beta))
        results.append(res)
    return NudgeTraces(path, grads, results, free)


def fourier_coefficient(traces: NudgeTraces) -> dict:
    """Complex first Fourier coefficient ``(1/(N|beta|)) sum_k g_k exp(-i phi_k)``."""
    path = traces.path
    if path.radius == 0:
        raise ValueError("a zero-radius path carries no gradient information")
    phases = np.exp(-1j * path.angles)
    scale = 1.0 / (path.n_points * path.radius)
    out = P.zeros_like(traces.grads[0], dtype=np.complex128)
    for g, ph in zip(traces.grads, phases):
        for key in out:
            out[key] += g[key] * ph
    return {k: v * scale for k, v in out.items()}


def hep_estimate(model, params, x, y, path: NudgePath, cfg: SettleConfig = SettleConfig(),
                 tags: tuple = (), traces: NudgeTraces | None = None) -> GradientEstimate:
    """N-point estimate of dL/dtheta from settles around a circle of teaching values."""
    if traces is None:
        traces = collect_traces(model, params, x, y, path, cfg, tags)
    flags = [traces.free.converged if traces.free else True] + [r.converged for r in traces.results]
    est = _finish(fourier_coefficient(traces), "hep", n_points=path.n_points, radius=path.radius,
                  converged=flags)
    est.extras["traces"] = traces
    return est


def _project(traces, angles, radius, part, basis):
    n = len(angles)
    if n < 3:
        raise ValueError(f"projection estimators need at least 3 samples per period, got {n}")
    if radius <= 0:
        raise ValueError("radius must be positive")
    weights = basis(angles) * 2.0 / (n * radius)
    if isinstance(traces, NudgeTraces):
        traces = traces.grads
    if isinstance(traces, (list, tuple)) and traces and isinstance(traces[0], dict):
        return {k: sum(w * part(g[k]) for w, g in zip(weights, traces)) for k in traces[0]}
    arr = np.asarray(traces)
    return np.tensordot(weights, part(arr), axes=(0, 0))


def _angles_for(traces, n):
    if isinstance(traces, NudgeTraces):
        return traces.path.angles
    return 2 * np.pi * np.arange(n) / n


def real_projection_estimate(traces, radius: float | None = None, angles=None):
    """``(2/(N|beta|)) sum_k Re(g_k) cos(phi_k)``.

    ``traces`` is a :class:`NudgeTraces`, a list of gradient dicts, or an
    array whose first axis runs over the ``N`` samples of one period.
    Arrays come back as arrays, everything else as a :class:`GradientEstimate`.
    """
    return _projection(traces, radius, angles, np.real, np.cos, "real-projection")


def imag_projection_estimate(traces, radius: float | None = None, angles=None):
    """``(2/(N|beta|)) sum_k Im(g_k) sin(phi_k)``; see :func:`real_projection_estimate`."""
    return _projection(traces, radius, angles, np.imag, np.sin, "imag-projection")


def _projection(traces, radius, angles, part, basis, kind):
    n = len(traces.grads) if isinstance(traces, NudgeTraces) else len(traces)
    if radius is None:
        if not isinstance(traces, NudgeTraces):
            raise ValueError("radius is required for raw traces")
        radius = traces.path.radius
    angles = _angles_for(traces, n) if angles is None else np.asarray(angles)
    out = _project(traces, angles, radius, part, basis)
    if isinstance(out, dict):
        return GradientEstimate({k: np.asarray(v, dtype=np.float64) for k, v in out.items()}, kind,
                                n_points=n, radius=radius)
    return out


def online_estimate(model, params, x, y, ocfg: OnlineConfig, cfg: SettleConfig = SettleConfig(),
                    tags: tuple = (), init_state=None) -> GradientEstimate:
    """Continuously driven estimate with an oscillating teaching signal.

    Each step ``n`` uses ``beta_n = |beta| exp(i phi_n)`` with the phase at
    the step midpoint, ``phi_n = 2 pi (n + 1/2) / T_osc``, and adds
    ``dF/dtheta(s_{n+1}, beta_n) exp(-i phi_n)`` to a running filter. No
    settling phases are run. The estimate is read out at the last period
    boundary; ``extras["history"]`` holds the readout after every period and
    ``extras["plasticity"]`` the readouts at each plasticity event.
    """
    rng = make_rng(cfg.rng_seed, *tags, ONLINE_TAG) if cfg.noise_std > 0 else None
    drive = model.input_drive(params, x)
    state = model.zero_state(len(x), dtype=np.complex128) if init_state is None else init_state.copy()
    if not np.iscomplexobj(state.layers[0]):
        state = type(state)([s.astype(np.complex128) for s in state.layers], state.x)
    acc = None
    history, plastic, step_res = [], [], np.empty(ocfg.total_periods * ocfg.t_osc)
    total = ocfg.total_periods * ocfg.t_osc
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(total):
            phi = ocfg.phase + 2 * np.pi * (n + 0.5) / ocfg.t_osc
            beta = ocfg.radius * np.exp(1j * phi)
            new = model.update(params, state, x, y, beta, drive=drive, noise_std=cfg.noise_std, rng=rng)
            step_res[n] = float(np.sqrt(sum(np.sum(np.abs(b - a) ** 2) for a, b in zip(state.layers, new.layers))))
            state = new
            if not np.isfinite(step_res[n]) or any(np.max(np.abs(s)) > 1e6 for s in state.layers):
                err = DivergenceError(f"online dynamics diverged at step {n} (beta={beta:.4g})")
                err.beta, err.index = beta, n
                raise err
            g = local_grad(model, params, state, x, y, beta)
            rot = np.exp(-1j * phi)
            acc = {k: v * rot for k, v in g.items()} if acc is None else {k: acc[k] + g[k] * rot for k in acc}
            elapsed = n + 1
            if elapsed % ocfg.t_osc == 0:
                history.append({k: v / (elapsed * ocfg.radius) for k, v in acc.items()})
            if elapsed % ocfg.t_plas == 0:
                plastic.append(history[-1] if ocfg.aligned else {k: v / (elapsed * ocfg.radius) for k, v in acc.items()})
    est = _finish(history[-1], "online", n_points=ocfg.t_osc, radius=ocfg.radius)
    est.extras.update(history=[P.realify(h)[0] for h in history],
                      plasticity=[P.realify(h)[0] for h in plastic],
                      step_residuals=step_res, final_state=state)
    return est


def bias_scaling_probe(model, params, x, y, n_points: int, radii, cfg: SettleConfig = SettleConfig(),
                       oracle: dict | None = None) -> BiasProbe:
    """Fit the slope of ``log ||grad_N - oracle||`` against ``log |beta|``."""
    radii = np.asarray(sorted(radii), dtype=float)
    if len(radii) < 3:
        raise ValueError("bias scaling needs at least 3 radii")
    if oracle is None:
        from .oracle import unrolled_adjoint_gradient
        oracle = unrolled_adjoint_gradient(model, params, x, y, cfg.max_steps).grads
    free = free_phase(model, params, x, y, cfg)
    ref = P.flatten(oracle)
    errors = []
    for r in radii:
        traces = collect_traces(model, params, x, y, NudgePath(r, n_points), cfg, free=free)
        est = hep_estimate(model, params, x, y, traces.path, cfg, traces=traces)
        errors.append(np.linalg.norm(P.flatten(est.grads) - ref))
    errors = np.asarray(errors)
    slope = float(np.polyfit(np.log(radii), np.log(errors), 1)[0])
    return BiasProbe(slope, radii, errors)
