"""PNG renderings of experiment outputs (written next to the CSV files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_stability_map(smap, path, radii=()):
    g = smap.grid
    with np.errstate(divide="ignore"):
        lv = np.log10(np.where(smap.diverged, np.inf, smap.residuals))
    lv = np.clip(np.nan_to_num(lv, posinf=0.0, neginf=-12.0), -12.0, 0.0)
    fig, ax = plt.subplots(figsize=(5, 4.3))
    im = ax.imshow(lv, extent=(g.re_min, g.re_max, g.im_min, g.im_max), cmap="Blues_r", vmin=-12, vmax=0)
    for r in radii:
        ax.add_patch(plt.Circle((0, 0), r, fill=False, color="tab:orange", lw=1))
    fig.colorbar(im, ax=ax, label="log10 final step residual")
    ax.set_xlabel("Re beta")
    ax.set_ylabel("Im beta")
    return _save(fig, path)


def plot_sweep(sweep, path, layer="all"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind in dict.fromkeys(r["estimator"] for r in sweep.rows):
        pts = sweep.values(kind, layer)
        ax.plot(pts[:, 0], pts[:, 1], "o-", label=kind)
    if sweep.axis == "radius":
        ax.set_xscale("log")
    ax.set_xlabel(sweep.axis)
    ax.set_ylabel("cosine similarity")
    ax.legend()
    return _save(fig, path)


def plot_online_curve(rows, path):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    t_values = sorted({r["t_osc"] for r in rows})
    shades = plt.cm.Blues(np.linspace(0.35, 1.0, len(t_values)))
    for t, c in zip(t_values, shades):
        sel = [r for r in rows if r["t_osc"] == t]
        a1.plot([r["period"] for r in sel], [r["cosine"] for r in sel], color=c, label=f"T_osc={t}")
    a1.set_xlabel("oscillation periods")
    a1.set_ylabel("cosine similarity")
    a1.legend(fontsize=7)
    last = [max((r for r in rows if r["t_osc"] == t), key=lambda r: r["period"]) for t in t_values]
    a2.loglog(t_values, [r["mean_step_residual"] for r in last], "o-")
    a2.set_xlabel("T_osc")
    a2.set_ylabel("mean step residual")
    return _save(fig, path)


def plot_orbit(orbit, path):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for u, (layer, idx) in enumerate(orbit.units):
        v = orbit.values[:, u]
        a1.plot(np.append(v.real, v.real[0]), np.append(v.imag, v.imag[0]), "o-", ms=3, label=f"L{layer}:{idx}")
    a1.set_xlabel("Re s")
    a1.set_ylabel("Im s")
    a1.legend(fontsize=7)
    t, re = orbit.real_series(2)
    a2.plot(t, re)
    a2.set_xlabel("path sample (two periods)")
    a2.set_ylabel("Re s")
    return _save(fig, path)


def plot_training_log(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ep = [r["epoch"] for r in rows]
    ax.plot(ep, [100 * r["train_err"] for r in rows], label="train")
    ax.plot(ep, [100 * r["val_err"] for r in rows], label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("error (%)")
    ax.legend()
    return _save(fig, path)
