"""``holoprop`` command line: every experiment and the training loop, driven by INI configs.

Each run writes ``resolved.cfg`` and its artifacts into the output directory
and prints one JSON summary line on stdout. Exit codes: 0 success,
1 configuration error, 2 numerical divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import estimators as E
from . import experiments as X
from .config import ConfigError, load_config
from .data import IdxError, load_mnist, synth_dataset
from .oracle import cosine_similarity, unrolled_adjoint_gradient
from .tensor import DivergenceError
from .trainer import CheckpointError, evaluate, load_checkpoint, read_log, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 1, 2, 3
COMMANDS = ("grad-check", "stability-map", "orbit", "sweep", "online-curve", "train", "eval")


def _summary(command, **fields):
    out = {"command": command, "status": "ok"}
    for k, v in fields.items():
        out[k] = float(v) if isinstance(v, (np.floating, np.integer)) else v
    print(json.dumps(out, sort_keys=False), flush=True)


def _dataset(cfg):
    d, spec = cfg["data"], cfg.network_spec()
    if d["source"] == "mnist":
        return load_mnist(d["path"], "train", d["limit"] or None)
    dim = spec.input_shape if spec.kind == "cnn" else spec.layer_sizes[0]
    return synth_dataset(d["limit"] or max(d["n_samples"], 1000), dim, spec.n_classes, cfg["run"]["seed"])


def _problem(cfg):
    spec = cfg.network_spec()
    data = _dataset(cfg) if cfg["data"]["source"] == "mnist" else None
    return X.make_problem(spec, cfg["data"]["n_samples"], cfg["run"]["seed"], data)


def _oracle(cfg, problem):
    e = cfg["experiment"]
    return unrolled_adjoint_gradient(problem.model, problem.params, problem.x, problem.y,
                                     e["oracle_steps"], e["oracle_tol"])


def _plot(name, *args, **kw):
    from . import plotting
    return getattr(plotting, name)(*args, **kw)


# -- subcommands ------------------------------------------------------------------

def cmd_grad_check(cfg, out):
    """Cosine of hEP and classic EP against the unrolled adjoint, per layer."""
    p = _problem(cfg)
    oracle = _oracle(cfg, p)
    path, scfg = cfg.nudge_path(), cfg.settle_config()
    hep = E.hep_estimate(p.model, p.params, p.x, p.y, path, scfg)
    classic = E.classic_ep(p.model, p.params, p.x, p.y, path.radius, scfg)
    reports = {"hep": cosine_similarity(hep, oracle), "classic": cosine_similarity(classic, oracle)}
    rows = [{"estimator": k, "layer": layer, "cosine": c} for k, r in reports.items() for layer, c in r.rows()]
    X.write_rows(os.path.join(out, "grad_check.csv"), ("estimator", "layer", "cosine"), rows)
    print(f"{'layer':<8}{'hep':>12}{'classic':>12}", file=sys.stderr)
    for (layer, h), (_, c) in zip(reports["hep"].rows(), reports["classic"].rows()):
        print(f"{layer:<8}{h:12.6f}{c:12.6f}", file=sys.stderr)
    return {"total_cosine": reports["hep"].total, "classic_cosine": reports["classic"].total,
            "imag_ratio": hep.imag_ratio, "radius": path.radius, "n_points": path.n_points,
            "oracle_converged": oracle.warning is None}


def cmd_stability_map(cfg, out):
    """Convergence map over a grid of complex teaching signals (CSV, PGM, PNG)."""
    p, e = _problem(cfg), cfg["experiment"]
    smap = X.stability_map(p.model, p.params, p.x, p.y, cfg.grid(), e["map_steps"], e["map_threshold"],
                           e["map_init"], workers=cfg["run"]["workers"])
    files = smap.write(os.path.join(out, "stability_map"))
    files.append(_plot("plot_stability_map", smap, os.path.join(out, "stability_map.png"),
                       radii=[cfg["nudge"]["radius"]]))
    bad = smap.unstable
    radii = np.abs(cfg.grid().betas())[bad]
    return {"unstable_fraction": float(bad.mean()),
            "min_unstable_radius": float(radii.min()) if radii.size else None,
            "files": [os.path.basename(f) for f in files]}


def cmd_orbit(cfg, out):
    """Fixed-point activities of chosen units around the teaching circle."""
    p = _problem(cfg)
    orbit = X.orbit_trace(p.model, p.params, p.x, p.y, cfg.nudge_path(), cfg["experiment"]["units"],
                          cfg.settle_config())
    orbit.write(os.path.join(out, "orbit.csv"))
    _plot("plot_orbit", orbit, os.path.join(out, "orbit.png"))
    return {"n_points": len(orbit.betas), "units": [f"{a}:{b}" for a, b in orbit.units]}


def cmd_sweep(cfg, out):
    """Estimator cosine along radius, point count or oscillation period."""
    p, e, n, o = _problem(cfg), cfg["experiment"], cfg["nudge"], cfg["online"]
    oracle = _oracle(cfg, p)
    res = X.cosine_sweep(p, oracle.grads, e["estimators"], e["axis"], e["values"], n["radius"], n["n_points"],
                         o["t_osc"], o["periods"], cfg.settle_config(), cfg["run"]["seed"], cfg["run"]["workers"])
    res.write(os.path.join(out, "sweep.csv"))
    _plot("plot_sweep", res, os.path.join(out, "sweep.png"))
    best = {k: float(np.nanmax(res.values(k)[:, 1])) if len(res.values(k)) else None for k in e["estimators"]}
    return {"axis": e["axis"], "points": len(e["values"]), "max_cosine": best}


def cmd_online_curve(cfg, out):
    """Per-period cosine of the online estimator for several periods."""
    p, e, o = _problem(cfg), cfg["experiment"], cfg["online"]
    oracle = _oracle(cfg, p)
    rows = X.online_curve(p, oracle.grads, e["t_osc_values"], o["periods"], cfg["nudge"]["radius"],
                          cfg.settle_config(), cfg["run"]["seed"], cfg["run"]["workers"])
    X.write_rows(os.path.join(out, "online_curve.csv"), X.ONLINE_COLUMNS, rows)
    _plot("plot_online_curve", rows, os.path.join(out, "online_curve.png"))
    final = {str(t): max((r for r in rows if r["t_osc"] == t), key=lambda r: r["period"])["cosine"]
             for t in e["t_osc_values"]}
    return {"final_cosine": final}


def _split(cfg):
    data = _dataset(cfg)
    n_val = cfg["data"]["val_size"]
    if n_val == 0:
        return data, None
    if not 0 < n_val < len(data):
        raise ConfigError(f"data.val_size = {n_val} must be below the {len(data)} available examples")
    return data.holdout(n_val)


def cmd_train(cfg, out):
    """Train on MNIST (or synthetic data) and log errors per epoch."""
    tcfg, spec = cfg.train_config(), cfg.network_spec()
    train_set, val_set = _split(cfg)
    ckpt_path = os.path.join(out, "checkpoint.hckpt")
    resume = load_checkpoint(ckpt_path) if cfg["train"]["resume"] and os.path.exists(ckpt_path) else None

    def progress(row):
        print(f"epoch {row['epoch']}: train_err={row['train_err']:.4f} val_err={row['val_err']:.4f} "
              f"({row['wall_seconds']:.0f}s)", file=sys.stderr, flush=True)

    result = train(spec, train_set, val_set, tcfg, out, resume=resume, progress=progress)
    rows = read_log(os.path.join(out, "train_log.csv"))
    _plot("plot_training_log", rows, os.path.join(out, "train_log.png"))
    last = result.log[-1] if result.log else {}
    return {"epochs": int(last.get("epoch", 0)), "train_err": last.get("train_err"),
            "val_err": last.get("val_err"), "estimator": tcfg.estimator}


def cmd_eval(cfg, out):
    """Classification error of a saved checkpoint on the validation split."""
    path = cfg["run"]["checkpoint"] or os.path.join(out, "checkpoint.hckpt")
    ckpt = load_checkpoint(path)
    _, val_set = _split(cfg)
    if val_set is None:
        val_set = _dataset(cfg)
    from .model import Network
    err = evaluate(Network(ckpt.spec), ckpt.params, val_set, cfg["train"]["eval_steps"])
    return {"checkpoint": path, "epoch": ckpt.epoch, "examples": len(val_set), "val_err": err}


HANDLERS = {
    "grad-check": cmd_grad_check, "stability-map": cmd_stability_map, "orbit": cmd_orbit,
    "sweep": cmd_sweep, "online-curve": cmd_online_curve, "train": cmd_train, "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file; missing keys take built-in defaults")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides run.out)")
    common.add_argument("--seed", type=int, metavar="U64", help="overrides run.seed")
    common.add_argument("--workers", type=int, metavar="K", help="worker processes (overrides run.workers)")
    common.add_argument("--dry-run", action="store_true", help="validate and print the resolved config only")
    parser = argparse.ArgumentParser(
        prog="holoprop", description="Gradient estimation experiments and training for convergent networks.",
        epilog="Any config key can also be set as HOLOPROP_<SECTION>__<KEY>=value.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=(HANDLERS[name].__doc__ or "").strip() or None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command

    def fail(code, kind, err):
        print(f"holoprop {cmd}: {kind}: {err}", file=sys.stderr)
        print(json.dumps({"command": cmd, "status": "error", "exit_code": code, "reason": str(err)}), flush=True)
        return code

    overrides = {("run", k): v for k, v in (("out", args.out), ("seed", args.seed), ("workers", args.workers))
                 if v is not None}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as err:
        return fail(EXIT_CONFIG, "config error", err)
    except OSError as err:
        return fail(EXIT_IO, "I/O error", err)
    if args.dry_run:
        print(cfg.to_ini(), file=sys.stderr)
        _summary(cmd, dry_run=True, out=cfg["run"]["out"])
        return EXIT_OK
    out = cfg["run"]["out"]
    try:
        X.ensure_dir(out)
        cfg.write(out)
        fields = HANDLERS[cmd](cfg, out)
    except DivergenceError as err:
        return fail(EXIT_DIVERGENCE, "divergence", err)
    except (OSError, IdxError, CheckpointError) as err:
        return fail(EXIT_IO, "I/O error", err)
    except (ConfigError, ValueError, KeyError) as err:
        return fail(EXIT_CONFIG, "config error", err)
    _summary(cmd, out=out, **fields)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
