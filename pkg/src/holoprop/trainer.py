"""Minibatch training with phase-based or online gradient estimates."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import estimators as E
from . import params as P
from .dynamics import PARAM_TAG, NudgePath, SettleConfig, make_rng, settle
from .model import Network, NetworkSpec
from .oracle import unrolled_adjoint_gradient
from .tensor import DivergenceError

ESTIMATORS = ("hep", "classic", "online", "adjoint")
SCHEDULES = ("constant", "cosine")
SHUFFLE_TAG = 101
LOG_COLUMNS = ("epoch", "train_err", "val_err", "mean_imag_residual", "wall_seconds", "train_loss")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 20
    learning_rate: float | tuple = 5e-2
    final_lr: float | tuple = 0.0
    momentum: float = 0.0
    weight_decay: float | tuple = 0.0
    epochs: int = 50
    schedule: str = "constant"
    estimator: str = "hep"
    radius: float = 0.4
    n_points: int = 10
    t_free: int = 200
    t_nudge: int = 50
    residual_tol: float = 0.0
    noise_std: float = 0.0
    t_osc: int = 300
    t_plas: int = 900
    eval_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "final_lr", "weight_decay"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)):
                object.__setattr__(self, name, tuple(float(a) for a in v))
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if np.any(np.asarray(self.learning_rate) <= 0):
            raise ValueError("learning rates must be positive")
        if np.any(np.asarray(self.final_lr) < 0) or np.any(np.asarray(self.weight_decay) < 0):
            raise ValueError("final_lr and weight_decay must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")

    def settle_config(self) -> SettleConfig:
        return SettleConfig(self.t_free, self.residual_tol, True, self.noise_std, self.seed, self.t_nudge)


def _per_layer(value, layer: int):
    if isinstance(value, tuple):
        if layer > len(value):
            raise ValueError(f"per-layer list has {len(value)} entries, layer {layer} requested")
        return value[layer - 1]
    return value


def learning_rate(cfg: TrainConfig, epoch: int, layer: int = 1) -> float:
    """Learning rate of ``layer`` (1-based) in ``epoch`` (0-based).

    The cosine schedule anneals from the initial to the final rate and hits
    the final rate exactly in the last epoch.
    """
    lr0 = _per_layer(cfg.learning_rate, layer)
    if cfg.schedule == "constant":
        return lr0
    lr1 = _per_layer(cfg.final_lr, layer)
    frac = epoch / (cfg.epochs - 1) if cfg.epochs > 1 else 1.0
    return lr1 + 0.5 * (lr0 - lr1) * (1 + np.cos(np.pi * frac))


def _layer_index(name: str) -> int:
    return int(P.layer_of(name)[len("layer"):]) if P.layer_of(name) != name else 1


def sgd_step(params, grads, velocity, cfg: TrainConfig, epoch: int):
    """``v <- m v + g + wd theta``; ``theta <- theta - lr(epoch) v``. Returns new params and velocity."""
    grads = getattr(grads, "grads", grads)
    new_p, new_v = {}, {}
    for k, theta in params.items():
        layer = _layer_index(k)
        v = cfg.momentum * velocity[k] + grads[k] + _per_layer(cfg.weight_decay, layer) * theta
        new_v[k] = v
        new_p[k] = theta - learning_rate(cfg, epoch, layer) * v
    return new_p, new_v


def evaluate(model, params, dataset, steps: int = 200, batch: int = 1000) -> float:
    """Fraction misclassified after a free-phase settle (arg-max of the output layer)."""
    wrong = 0
    for start in range(0, len(dataset), batch):
        x = model.prepare_input(dataset.images[start:start + batch])
        y = dataset.targets[start:start + batch]
        res = settle(model, params, x, y, 0.0, SettleConfig(steps, 0.0))
        wrong += int(np.sum(model.predict(res.state) != dataset.labels[start:start + batch]))
    return wrong / len(dataset)


# -- checkpoints --------------------------------------------------------------

MAGIC = b"HCKPT\x00\r\n"
VERSION = 1


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict
    velocity: dict
    epoch: int                      # epochs completed
    seed: int
    train_config: dict = field(default_factory=dict)

    @property
    def spec_hash(self) -> str:
        return hashlib.sha256(canonical_spec(self.spec).encode()).hexdigest()


def canonical_spec(spec: NetworkSpec) -> str:
    return json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_arrays(arrays: dict) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        out.append(_pack_str(name) + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def save_checkpoint(path, ckpt: Checkpoint):
    body = b"".join([
        struct.pack("<I", VERSION),
        _pack_str(canonical_spec(ckpt.spec)),
        bytes.fromhex(ckpt.spec_hash),
        struct.pack("<IQ", ckpt.epoch, ckpt.seed),
        _pack_str(json.dumps(ckpt.train_config, sort_keys=True)),
        _pack_arrays(ckpt.params),
        _pack_arrays(ckpt.velocity),
    ])
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + body)
    os.replace(tmp, path)


class CheckpointError(ValueError):
    """Unreadable, truncated or inconsistent checkpoint file."""


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def arrays(self) -> dict:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            name = self.string()
            (ndim,) = self.unpack("<I")
            shape = self.unpack(f"<{ndim}Q") if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad checkpoint magic at offset 0")
    r = _Reader(data, path)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    spec_text = r.string()
    digest = r.take(32)
    if hashlib.sha256(spec_text.encode()).digest() != digest:
        raise CheckpointError(f"{path}: spec hash mismatch")
    epoch, seed = r.unpack("<IQ")
    train_cfg = json.loads(r.string())
    params, velocity = r.arrays(), r.arrays()
    spec = NetworkSpec(**json.loads(spec_text))
    return Checkpoint(spec, params, velocity, epoch, seed, train_cfg)


# -- training loop ----------------------------------------------------------------

class TrainingAborted(DivergenceError):
    """Dynamics diverged mid-training; ``checkpoint_path`` holds the last good state."""


@dataclass
class TrainResult:
    log: list
    params: dict
    checkpoint: Checkpoint


def _estimate(model, params, x, y, cfg: TrainConfig, tags):
    scfg = cfg.settle_config()
    if cfg.estimator == "hep":
        est = E.hep_estimate(model, params, x, y, NudgePath(cfg.radius, cfg.n_points), scfg, tags)
        return est, est.extras["traces"].free.state
    if cfg.estimator == "classic":
        est = E.classic_ep(model, params, x, y, cfg.radius, scfg, tags=tags)
        return est, None
    if cfg.estimator == "online":
        oc = E.OnlineConfig(cfg.t_osc, cfg.t_plas, cfg.t_plas // cfg.t_osc, cfg.radius)
        return E.online_estimate(model, params, x, y, oc, scfg, tags), None
    return unrolled_adjoint_gradient(model, params, x, y, cfg.t_free, tol=np.inf), None


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(LOG_COLUMNS))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def train(spec: NetworkSpec, train_set, val_set, cfg: TrainConfig, out_dir: str | None = None,
          resume: Checkpoint | None = None, epochs: int | None = None, progress=None) -> TrainResult:
    """Train from scratch (or from ``resume``) and return the per-epoch log.

    Every minibatch starts its dynamics from a zero state. Shuffling and
    noise streams derive from ``(seed, epoch, batch)`` alone, so resuming
    from a checkpoint reproduces an uninterrupted run exactly. ``epochs``
    limits how many epochs this call runs.
    """
    model = Network(spec)
    if resume is not None:
        if canonical_spec(resume.spec) != canonical_spec(spec):
            raise CheckpointError("checkpoint was written for a different network")
        params, velocity, start = P.copy(resume.params), P.copy(resume.velocity), resume.epoch
    else:
        params = model.init_params(make_rng(cfg.seed, PARAM_TAG))
        velocity, start = P.zeros_like(params), 0
    stop = cfg.epochs if epochs is None else min(cfg.epochs, start + epochs)
    log_path = ckpt_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.csv")
        ckpt_path = os.path.join(out_dir, "checkpoint.hckpt")
    rows = read_log(log_path) if (resume is not None and log_path and os.path.exists(log_path)) else []
    rows = [r for r in rows if r["epoch"] <= start]
    cfg_dict = asdict(cfg)

    def snapshot(epoch_done):
        return Checkpoint(spec, params, velocity, epoch_done, cfg.seed, cfg_dict)

    n = len(train_set)
    for epoch in range(start, stop):
        t0 = time.perf_counter()
        order = make_rng(cfg.seed, SHUFFLE_TAG, epoch).permutation(n)
        wrong, loss_sum, imag = 0, 0.0, []
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            x, y = model.prepare_input(train_set.images[idx]), train_set.targets[idx]
            try:
                est, free = _estimate(model, params, x, y, cfg, (epoch, b))
            except DivergenceError as err:
                if ckpt_path:
                    save_checkpoint(ckpt_path, snapshot(epoch))
                raise TrainingAborted(f"epoch {epoch + 1}, batch {b}: {err}; "
                                      f"last good state saved to {ckpt_path}") from err
            if free is None:
                free = settle(model, params, x, y, 0.0, SettleConfig(cfg.eval_steps, 0.0)).state
            wrong += int(np.sum(model.predict(free) != train_set.labels[idx]))
            loss_sum += float(np.sum(model.loss(params, free, y).real))
            imag.append(getattr(est, "imag_residual", 0.0))
            params, velocity = sgd_step(params, est, velocity, cfg, epoch)
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise TrainingAborted(f"epoch {epoch + 1}, batch {b}: non-finite parameters")
        val_err = evaluate(model, params, val_set, cfg.eval_steps) if val_set is not None and len(val_set) else float("nan")
        rows.append({"epoch": epoch + 1, "train_err": wrong / n, "val_err": val_err,
                     "mean_imag_residual": float(np.mean(imag)), "wall_seconds": time.perf_counter() - t0,
                     "train_loss": loss_sum / n})
        if progress:
            progress(rows[-1])
        if out_dir:
            write_log(log_path, rows)
            save_checkpoint(ckpt_path, snapshot(epoch + 1))
    return TrainResult(rows, params, snapshot(stop))


def initial_loss(spec: NetworkSpec, dataset, cfg: TrainConfig) -> float:
    """Mean free-phase loss of the untrained network (same init as :func:`train`)."""
    model = Network(spec)
    params = model.init_params(make_rng(cfg.seed, PARAM_TAG))
    total = 0.0
    for start in range(0, len(dataset), 1000):
        x = model.prepare_input(dataset.images[start:start + 1000])
        y = dataset.targets[start:start + 1000]
        res = settle(model, params, x, y, 0.0, SettleConfig(cfg.eval_steps, 0.0))
        total += float(np.sum(model.loss(params, res.state, y)))
    return total / len(dataset)
