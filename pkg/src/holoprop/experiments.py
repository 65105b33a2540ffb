"""Figure-style experiment drivers that write their data as CSV (and PGM for maps)."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimators as E
from .data import synth_dataset
from .dynamics import PARAM_TAG, NudgePath, SettleConfig, make_rng, per_sample_blowup, per_sample_residual, settle
from .model.network import NetworkState
from .model import build_model
from .oracle import cosine_similarity
from .tensor import DivergenceError




@dataclass
class Problem:
    model: object
    params: dict
    x: np.ndarray
    y: np.ndarray


def make_problem(spec, n_samples: int = 1, seed: int = 0, dataset=None) -> Problem:
    """Seeded parameters plus either Gaussian inputs with random one-hot targets or the first
    ``n_samples`` examples of ``dataset``."""
    model = build_model(spec)
    params = model.init_params(make_rng(seed, PARAM_TAG))
    if dataset is None:
        dim = spec.input_shape if spec.kind == "cnn" else spec.layer_sizes[0]
        dataset = synth_dataset(n_samples, dim, spec.n_classes, seed)
    x = model.prepare_input(dataset.images[:n_samples])
    return Problem(model, params, x, dataset.targets[:n_samples])


def run_jobs(fn, jobs: list, workers: int = 1) -> list:
    """Map ``fn`` over ``jobs``; results come back in job order for any worker count."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# -- stability maps -----------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    re_min: float = -0.6
    re_max: float = 0.6
    im_min: float = -0.6
    im_max: float = 0.6
    resolution: int = 201

    def __post_init__(self):
        vals = (self.re_min, self.re_max, self.im_min, self.im_max)
        if not all(np.isfinite(vals)) or self.re_min >= self.re_max or self.im_min >= self.im_max:
            raise ValueError(f"bad grid extents {vals}")
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")

    @property
    def re(self):
        return np.linspace(self.re_min, self.re_max, self.resolution)

    @property
    def im(self):
        # top image row is the largest imaginary part
        return np.linspace(self.im_max, self.im_min, self.resolution)

    def betas(self) -> np.ndarray:
        return self.re[None, :] + 1j * self.im[:, None]

    @property
    def cell(self) -> tuple[float, float]:
        n = max(self.resolution - 1, 1)
        return (self.re_max - self.re_min) / n, (self.im_max - self.im_min) / n


@dataclass
class StabilityMap:
    grid: GridSpec
    residuals: np.ndarray      # (res, res) final step residual; inf where diverged
    diverged: np.ndarray       # (res, res) sentinel tripped
    steps: int
    threshold: float
    init: str = "zeros"

    @property
    def unstable(self) -> np.ndarray:
        """Cells that either diverged or had not settled below ``threshold``."""
        return self.diverged | ~(self.residuals <= self.threshold)

    def circle_hits(self, radius: float) -> bool:
        """Whether the circle ``|beta| = radius`` passes through any unstable cell."""
        dr, di = self.grid.cell
        b = self.grid.betas()[self.unstable]
        if b.size == 0:
            return False
        # nearest and farthest points of each cell from the origin
        re, im = np.abs(b.real), np.abs(b.imag)
        near = np.hypot(np.maximum(re - dr / 2, 0), np.maximum(im - di / 2, 0))
        far = np.hypot(re + dr / 2, im + di / 2)
        return bool(np.any((near <= radius) & (radius <= far)))

    def header(self) -> dict:
        g = self.grid
        return {"re_min": g.re_min, "re_max": g.re_max, "im_min": g.im_min, "im_max": g.im_max,
                "resolution": g.resolution, "steps": self.steps, "threshold": self.threshold,
                "init": self.init}

    def write(self, stem: str) -> list[str]:
        """Write ``stem.csv``, ``stem.pgm`` and ``stem.txt``; returns the paths."""
        paths = [stem + ".csv", stem + ".pgm", stem + ".txt"]
        betas = self.grid.betas()
        with open(paths[0], "w", newline="") as fh:
            fh.write("".join(f"# {k}={v}\n" for k, v in self.header().items()))
            w = csv.writer(fh)
            w.writerow(["row", "col", "beta_re", "beta_im", "residual", "diverged", "unstable"])
            unstable = self.unstable
            for i in range(self.grid.resolution):
                for j in range(self.grid.resolution):
                    w.writerow([i, j, repr(float(betas[i, j].real)), repr(float(betas[i, j].imag)),
                                repr(float(self.residuals[i, j])), int(self.diverged[i, j]), int(unstable[i, j])])
        write_pgm(paths[1], self.image())
        with open(paths[2], "w") as fh:
            fh.write("".join(f"{k} = {v}\n" for k, v in self.header().items()))
            fh.write("rows run from im_max (top) to im_min; columns from re_min to re_max\n")
            fh.write("pixel = 0 for residual <= 1e-12 (dark, stable), 255 for diverged or residual >= 1\n")
        return paths

    def image(self) -> np.ndarray:
        """8-bit image: log10 residual mapped from [-12, 0] to [0, 255]."""
        with np.errstate(divide="ignore"):
            lv = np.log10(np.where(self.diverged, np.inf, self.residuals))
        lv = np.clip(np.nan_to_num(lv, nan=0.0, posinf=0.0, neginf=-12.0), -12.0, 0.0)
        return np.round((lv + 12.0) / 12.0 * 255).astype(np.uint8)


def write_pgm(path: str, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def _tile(a, n):
    return np.tile(a, (n,) + (1,) * (a.ndim - 1))


def _map_chunk(job):
    model, params, x, y, betas, steps, threshold, init_state = job
    n, b = len(betas), len(x)
    # cell-major ordering: every sample for cell 0, then cell 1, ...
    xs, ys = _tile(x, n), _tile(y, n)
    beta = np.repeat(betas, b).astype(np.complex128)
    if init_state is None:
        state = model.zero_state(n * b, dtype=np.complex128)
    else:
        state = NetworkState([_tile(s, n).astype(np.complex128) for s in init_state.layers])
    drive = model.input_drive(params, xs)
    final = np.full(n * b, np.inf)
    done = np.zeros(n * b, dtype=bool)
    diverged = np.zeros(n * b, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            new = model.update(params, state, xs, ys, beta, drive=drive)
            res = per_sample_residual(state.layers, new.layers)
            diverged |= per_sample_blowup(new.layers) & ~done
            hit = (res <= threshold) & ~done & ~diverged
            final[hit] = res[hit]
            done |= hit
            state = new
            if np.all(done | diverged):
                break
    open_ = ~done & ~diverged
    final[open_] = res[open_]
    final[diverged] = np.inf
    return final.reshape(n, b).max(axis=1), diverged.reshape(n, b).any(axis=1)


def stability_map(model, params, x, y, grid: GridSpec = GridSpec(), t_steps: int = 200,
                  threshold: float = 1e-6, init: str = "zeros", chunk: int = 4096,
                  workers: int = 1) -> StabilityMap:
    """Settle every complex ``beta`` of ``grid`` for up to ``t_steps`` steps.

    A cell stops at the first step whose residual is at most ``threshold``
    (the same rule :func:`settle` uses), otherwise it keeps the residual of
    the last step.

    ``init="zeros"`` starts each cell from a zero state; ``init="free"``
    starts from the free fixed point. A batch of inputs marks a cell by its
    worst sample.
    """
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    if init not in ("zeros", "free"):
        raise ValueError(f"unknown map initialisation {init!r}")
    x = model.prepare_input(x)
    start = None
    if init == "free":
        start = settle(model, params, x, y, 0.0, SettleConfig(10 * t_steps, 1e-12)).state
    flat = grid.betas().ravel()
    per = max(1, chunk // len(x))
    jobs = [(model, params, x, y, flat[i:i + per], t_steps, threshold, start) for i in range(0, len(flat), per)]
    out = run_jobs(_map_chunk, jobs, workers)
    residuals = np.concatenate([o[0] for o in out]).reshape(grid.resolution, grid.resolution)
    diverged = np.concatenate([o[1] for o in out]).reshape(grid.resolution, grid.resolution)
    return StabilityMap(grid, residuals, diverged, t_steps, threshold, init)


# -- orbits ---------------------------------------------------------------------

@dataclass
class OrbitTrace:
    betas: np.ndarray            # (N,)
    units: list                  # [(layer, flat index)]
    values: np.ndarray           # (N, n_units) complex fixed-point activities of sample 0
    products: np.ndarray | None  # (N,) complex product of the first two units, if two or more

    def real_series(self, periods: int = 2):
        """Time index and real parts over ``periods`` repetitions of the path."""
        n = len(self.betas)
        t = np.arange(periods * n)
        return t, np.real(np.tile(self.values, (periods, 1)))

    def write(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "beta_re", "beta_im", "layer", "unit", "value_re", "value_im"])
            for k, b in enumerate(self.betas):
                for u, (layer, idx) in enumerate(self.units):
                    v = self.values[k, u]
                    w.writerow([k, repr(b.real), repr(b.imag), layer, idx, repr(v.real), repr(v.imag)])


def orbit_trace(model, params, x, y, path: NudgePath, units, cfg: SettleConfig = SettleConfig()) -> OrbitTrace:
    """Fixed-point activities of selected units (layer is 1-based) at every point of ``path``."""
    x = model.prepare_input(x)
    traces = E.collect_traces(model, params, x, y, path, cfg)
    values = np.empty((path.n_points, len(units)), dtype=np.complex128)
    for k, res in enumerate(traces.results):
        for u, (layer, idx) in enumerate(units):
            values[k, u] = res.state.layers[layer - 1][0].reshape(-1)[idx]
    prods = values[:, 0] * values[:, 1] if len(units) >= 2 else None
    return OrbitTrace(path.points, [tuple(u) for u in units], values, prods)


# -- cosine sweeps ---------------------------------------------------------------

KINDS = ("hep", "classic", "classic-avg", "online")
AXES = ("radius", "n_points", "t_osc")


@dataclass
class SweepResult:
    axis: str
    rows: list = field(default_factory=list)  # dicts: axis_value, estimator, layer, cosine, seed, noise_std

    COLUMNS = ("axis", "axis_value", "estimator", "layer", "cosine", "seed", "noise_std")

    def values(self, estimator: str, layer: str = "all"):
        pts = [(r["axis_value"], r["cosine"]) for r in self.rows if r["estimator"] == estimator and r["layer"] == layer]
        return np.array(pts, dtype=float).reshape(-1, 2)

    def write(self, path: str):
        write_rows(path, self.COLUMNS, [{"axis": self.axis, **r} for r in self.rows])


def write_rows(path: str, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


@dataclass(frozen=True)
class SweepPoint:
    kind: str
    radius: float
    n_points: int
    t_osc: int
    periods: int
    cfg: SettleConfig


def _estimate(problem: Problem, pt: SweepPoint):
    m, p, x, y = problem.model, problem.params, problem.x, problem.y
    if pt.kind == "hep":
        return E.hep_estimate(m, p, x, y, NudgePath(pt.radius, pt.n_points), pt.cfg)
    if pt.kind == "classic":
        return E.classic_ep(m, p, x, y, pt.radius, pt.cfg)
    if pt.kind == "classic-avg":
        return E.classic_ep(m, p, x, y, pt.radius, pt.cfg, realizations=-(-pt.n_points // 2))
    if pt.kind == "online":
        oc = E.OnlineConfig(pt.t_osc, pt.t_osc * pt.periods, pt.periods, pt.radius)
        return E.online_estimate(m, p, x, y, oc, pt.cfg)
    raise ValueError(f"unknown estimator kind {pt.kind!r}; choose from {KINDS}")


def _sweep_job(job):
    problem, oracle, pt, axis_value, seed = job
    try:
        rep = cosine_similarity(_estimate(problem, pt), oracle)
        pairs = list(rep.rows())
    except DivergenceError:
        layers = ["all"] + sorted({k for k in _layer_names(oracle)})
        pairs = [(name, float("nan")) for name in layers]
    return [{"axis_value": axis_value, "estimator": pt.kind, "layer": name, "cosine": c,
             "seed": seed, "noise_std": pt.cfg.noise_std} for name, c in pairs]


def _layer_names(grads):
    from .params import layer_of
    return [layer_of(k) for k in grads]


def cosine_sweep(problem: Problem, oracle: dict, kinds, axis: str, values, radius: float = 0.1,
                 n_points: int = 24, t_osc: int = 400, periods: int = 10,
                 cfg: SettleConfig = SettleConfig(), seed: int = 0, workers: int = 1) -> SweepResult:
    """Cosine similarity of each estimator with ``oracle`` along one axis.

    A settle that diverges records NaN for that point instead of aborting.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    for k in kinds:
        if k not in KINDS:
            raise ValueError(f"unknown estimator kind {k!r}; choose from {KINDS}")
    jobs = []
    for v in values:
        for kind in kinds:
            r, n, t = radius, n_points, t_osc
            if axis == "radius":
                r = float(v)
            elif axis == "n_points":
                n = int(v)
            else:
                t = int(v)
            jobs.append((problem, oracle, SweepPoint(kind, r, n, t, periods, cfg), v, seed))
    result = SweepResult(axis)
    for rows in run_jobs(_sweep_job, jobs, workers):
        result.rows.extend(rows)
    return result


# -- online convergence -----------------------------------------------------------

ONLINE_COLUMNS = ("t_osc", "period", "cosine", "mean_step_residual", "seed")


def _online_job(job):
    problem, oracle, t_osc, periods, radius, cfg, seed = job
    oc = E.OnlineConfig(t_osc, t_osc * periods, periods, radius)
    est = E.online_estimate(problem.model, problem.params, problem.x, problem.y, oc, cfg)
    res = est.extras["step_residuals"].reshape(periods, t_osc)
    return [{"t_osc": t_osc, "period": i + 1, "cosine": cosine_similarity(h, oracle).total,
             "mean_step_residual": float(res[i].mean()), "seed": seed}
            for i, h in enumerate(est.extras["history"])]


def online_curve(problem: Problem, oracle: dict, t_osc_values, periods: int = 10, radius: float = 0.4,
                 cfg: SettleConfig = SettleConfig(), seed: int = 0, workers: int = 1) -> list[dict]:
    """Per-period cosine of the online estimate for several oscillation periods.

    ``mean_step_residual`` is the average distance between consecutive states
    within the period, a proxy for how far the dynamics lag their fixed point.
    """
    jobs = [(problem, oracle, int(t), periods, radius, cfg, seed) for t in t_osc_values]
    rows = []
    for part in run_jobs(_online_job, jobs, workers):
        rows.extend(part)
    return rows


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
