import csv

import numpy as np
import pytest

from holoprop import experiments as X
from holoprop.dynamics import NudgePath, SettleConfig
from holoprop.model import NetworkSpec
from holoprop.oracle import unrolled_adjoint_gradient


def small_map(prob, workers=1, **kw):
    return X.stability_map(prob.model, prob.params, prob.x, prob.y, X.GridSpec(-2, 2, -2, 2, 21),
                           t_steps=80, workers=workers, **kw)


def test_grid_orientation():
    g = X.GridSpec(-1, 1, -2, 2, 5)
    b = g.betas()
    assert b[0, 0] == -1 + 2j and b[-1, -1] == 1 - 2j
    assert g.cell == (0.5, 1.0)
    with pytest.raises(ValueError):
        X.GridSpec(1, -1, 0, 1)


def test_map_is_worker_count_invariant(mlp):
    a, b = small_map(mlp, 1), small_map(mlp, 3, chunk=50)
    np.testing.assert_array_equal(a.residuals, b.residuals)
    np.testing.assert_array_equal(a.diverged, b.diverged)


def test_map_files_are_reproducible(mlp, tmp_path):
    paths1 = small_map(mlp).write(str(tmp_path / "a"))
    paths2 = small_map(mlp).write(str(tmp_path / "b"))
    for p, q in zip(paths1[:2], paths2[:2]):
        assert open(p, "rb").read() == open(q, "rb").read()
    img = X.read_pgm(paths1[1])
    assert img.shape == (21, 21) and img.dtype == np.uint8
    text = open(paths1[0]).read()
    assert "# init=zeros" in text and "# threshold=1e-06" in text
    assert "re_min = -2" in open(paths1[2]).read()


def test_map_centre_is_stable_and_unstable_cells_are_far(mlp):
    smap = small_map(mlp, threshold=1e-4)
    centre = smap.grid.resolution // 2
    assert not smap.unstable[centre, centre]
    assert not smap.circle_hits(0.1)


def test_circle_hits_geometry():
    g = X.GridSpec(-1, 1, -1, 1, 3)
    res = np.zeros((3, 3))
    div = np.zeros((3, 3), dtype=bool)
    div[0, 2] = True                      # cell centred at 1 + 1i, half-width 0.5
    smap = X.StabilityMap(g, res, div, 10, 1e-6)
    assert not smap.circle_hits(0.7)
    assert smap.circle_hits(0.8) and smap.circle_hits(2.1)
    assert not smap.circle_hits(2.2)


def test_map_init_free_and_bad_init(mlp):
    smap = small_map(mlp, init="free")
    assert smap.init == "free" and smap.header()["init"] == "free"
    with pytest.raises(ValueError):
        small_map(mlp, init="random")


def test_pgm_round_trip(tmp_path):
    img = (np.arange(12).reshape(3, 4) * 20).astype(np.uint8)
    X.write_pgm(str(tmp_path / "a.pgm"), img)
    np.testing.assert_array_equal(X.read_pgm(str(tmp_path / "a.pgm")), img)


def test_orbit_trace_rows(mlp, tmp_path):
    orbit = X.orbit_trace(mlp.model, mlp.params, mlp.x, mlp.y, NudgePath(0.1, 8), [(1, 0), (2, 3)],
                          SettleConfig(500, 1e-12))
    assert orbit.values.shape == (8, 2) and orbit.products.shape == (8,)
    t, re = orbit.real_series(2)
    assert len(t) == 16 and re.shape == (16, 2)
    orbit.write(str(tmp_path / "o.csv"))
    assert len(open(tmp_path / "o.csv").readlines()) == 1 + 16


def test_sweep_rows_and_determinism(mlp, tmp_path):
    oracle = unrolled_adjoint_gradient(mlp.model, mlp.params, mlp.x, mlp.y, 1000).grads
    cfg = SettleConfig(500, 1e-10)
    a = X.cosine_sweep(mlp, oracle, ["hep", "classic"], "radius", [0.05, 0.2], n_points=8, cfg=cfg)
    b = X.cosine_sweep(mlp, oracle, ["hep", "classic"], "radius", [0.05, 0.2], n_points=8, cfg=cfg, workers=2)
    a.write(str(tmp_path / "a.csv"))
    b.write(str(tmp_path / "b.csv"))
    assert open(tmp_path / "a.csv").read() == open(tmp_path / "b.csv").read()
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == set(X.SweepResult.COLUMNS)
    assert len(rows) == 2 * 2 * 4          # values x estimators x (all + 3 layers)
    hep = a.values("hep")
    assert np.all(hep[:, 1] > 0.9999)


def test_sweep_records_nan_on_divergence(mlp):
    oracle = unrolled_adjoint_gradient(mlp.model, mlp.params, mlp.x, mlp.y, 1000).grads
    res = X.cosine_sweep(mlp, oracle, ["hep"], "n_points", [4], radius=0.1, cfg=SettleConfig(2, 1e-12))
    assert np.isnan(res.values("hep")[0, 1])


def test_sweep_rejects_unknown_axis_and_kind(mlp):
    with pytest.raises(ValueError):
        X.cosine_sweep(mlp, {}, ["hep"], "noise", [1])
    with pytest.raises(ValueError):
        X.cosine_sweep(mlp, {}, ["bp"], "radius", [1])


def test_online_curve_rows(mlp):
    oracle = unrolled_adjoint_gradient(mlp.model, mlp.params, mlp.x, mlp.y, 1000).grads
    rows = X.online_curve(mlp, oracle, [10, 40], periods=3, radius=0.1)
    assert [(r["t_osc"], r["period"]) for r in rows] == [(10, 1), (10, 2), (10, 3), (40, 1), (40, 2), (40, 3)]
    last = {r["t_osc"]: r for r in rows if r["period"] == 3}
    assert last[40]["cosine"] > last[10]["cosine"]
    assert last[40]["mean_step_residual"] < last[10]["mean_step_residual"]


def test_make_problem_uses_dataset_when_given():
    from holoprop.data import synth_dataset
    ds = synth_dataset(4, 6, 4, 9)
    prob = X.make_problem(NetworkSpec(), n_samples=2, seed=0, dataset=ds)
    np.testing.assert_array_equal(prob.x, ds.images[:2])
