import json
import os

import pytest

from holoprop.cli import main

from conftest import CONFIGS, MNIST_SUBSET


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    lines = [l for l in out.splitlines() if l.startswith("{")]
    return code, json.loads(lines[-1]), err


def cfg_file(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_grad_check_on_shipped_config(tmp_path, capsys):
    code, summary, err = run(capsys, "grad-check", "--config", os.path.join(CONFIGS, "toy.cfg"),
                             "--out", str(tmp_path))
    assert code == 0 and summary["status"] == "ok"
    assert summary["total_cosine"] >= 0.999
    assert "layer1" in err
    assert (tmp_path / "resolved.cfg").exists() and (tmp_path / "grad_check.csv").exists()


def test_dry_run_computes_nothing(tmp_path, capsys):
    code, summary, err = run(capsys, "train", "--config", os.path.join(CONFIGS, "table1_hep.cfg"),
                             "--out", str(tmp_path / "x"), "--dry-run")
    assert code == 0 and summary["dry_run"] is True
    assert "[train]" in err and "estimator = hep" in err
    assert not (tmp_path / "x").exists()


def test_flags_override_config(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HOLOPROP_NUDGE__N_POINTS", "6")
    code, summary, _ = run(capsys, "grad-check", "--out", str(tmp_path), "--seed", "3", "--workers", "2")
    assert code == 0 and summary["n_points"] == 6
    text = (tmp_path / "resolved.cfg").read_text()
    assert "seed = 3" in text and "workers = 2" in text and "n_points = 6" in text


def test_config_error_exit_code(tmp_path, capsys):
    code, summary, err = run(capsys, "grad-check", "--config", cfg_file(tmp_path, "[run]\nsed = 1\n"))
    assert code == 1 and summary["status"] == "error"
    assert "unknown key" in err and len(err.strip().splitlines()) == 1


def test_missing_config_file_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "grad-check", "--config", str(tmp_path / "nope.cfg"))
    assert code == 3 and "I/O" in err


def test_missing_data_is_io_error(tmp_path, capsys):
    text = f"[data]\nsource = mnist\npath = {tmp_path / 'empty'}\n[network]\nlayer_sizes = 784, 8, 10\n"
    code, _, _ = run(capsys, "grad-check", "--config", cfg_file(tmp_path, text), "--out", str(tmp_path / "o"))
    assert code == 3


def test_divergence_exit_code(tmp_path, capsys):
    text = "[settle]\nt_free = 3\nt_nudge = 3\nresidual_tol = 1e-12\n"
    code, summary, err = run(capsys, "grad-check", "--config", cfg_file(tmp_path, text), "--out", str(tmp_path / "o"))
    assert code == 2 and "divergence" in err and summary["exit_code"] == 2


def test_unwritable_output_is_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, _ = run(capsys, "orbit", "--out", str(blocker / "sub"))
    assert code == 3


def test_stability_map_artifacts_are_reproducible(tmp_path, capsys):
    text = "[experiment]\nre_min = -2\nre_max = 2\nim_min = -2\nim_max = 2\nresolution = 15\nmap_steps = 60\n"
    path = cfg_file(tmp_path, text)
    for out, workers in (("a", "1"), ("b", "2")):
        code, summary, _ = run(capsys, "stability-map", "--config", path, "--out", str(tmp_path / out),
                               "--workers", workers)
        assert code == 0
    assert set(summary["files"]) == {"stability_map.csv", "stability_map.pgm", "stability_map.txt",
                                     "stability_map.png"}
    for name in ("stability_map.csv", "stability_map.pgm", "stability_map.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_orbit_sweep_and_online_curve(tmp_path, capsys):
    text = ("[settle]\nt_free = 300\nt_nudge = 300\n[nudge]\nn_points = 8\n[online]\nperiods = 2\n"
            "[experiment]\nvalues = 0.05, 0.2\nestimators = hep, classic-avg\nt_osc_values = 10, 30\n")
    path = cfg_file(tmp_path, text)
    for cmd, files in (("orbit", ["orbit.csv", "orbit.png"]), ("sweep", ["sweep.csv", "sweep.png"]),
                       ("online-curve", ["online_curve.csv", "online_curve.png"])):
        code, summary, _ = run(capsys, cmd, "--config", path, "--out", str(tmp_path / cmd))
        assert code == 0, summary
        for f in files:
            assert (tmp_path / cmd / f).stat().st_size > 0
    assert summary["final_cosine"]["30"] > summary["final_cosine"]["10"]


def test_train_then_eval_then_resume(tmp_path, capsys):
    text = ("[network]\nlayer_sizes = 6, 8, 4\n[data]\nlimit = 60\nval_size = 20\n"
            "[settle]\nt_free = 30\nt_nudge = 10\nresidual_tol = 0\n[nudge]\nn_points = 4\nradius = 0.3\n"
            "[train]\nepochs = 2\nbatch_size = 10\neval_steps = 30\n")
    path = cfg_file(tmp_path, text)
    out = str(tmp_path / "t")
    code, summary, err = run(capsys, "train", "--config", path, "--out", out)
    assert code == 0 and summary["epochs"] == 2 and "epoch 2" in err
    for f in ("train_log.csv", "train_log.png", "checkpoint.hckpt", "resolved.cfg"):
        assert os.path.exists(os.path.join(out, f))
    code, ev, _ = run(capsys, "eval", "--config", path, "--out", out)
    assert code == 0 and ev["val_err"] == pytest.approx(summary["val_err"]) and ev["epoch"] == 2
    os.environ["HOLOPROP_TRAIN__RESUME"] = "true"
    os.environ["HOLOPROP_TRAIN__EPOCHS"] = "3"
    try:
        code, more, err = run(capsys, "train", "--config", path, "--out", out)
    finally:
        del os.environ["HOLOPROP_TRAIN__RESUME"], os.environ["HOLOPROP_TRAIN__EPOCHS"]
    assert code == 0 and more["epochs"] == 3 and "epoch 1:" not in err


def test_eval_without_checkpoint_is_io_error(tmp_path, capsys):
    code, _, _ = run(capsys, "eval", "--out", str(tmp_path))
    assert code == 3


@pytest.mark.skipif(not os.path.isdir(MNIST_SUBSET), reason="bundled MNIST subset missing")
def test_val_size_larger_than_data_is_config_error(tmp_path, capsys):
    text = f"[data]\nsource = mnist\npath = {MNIST_SUBSET}\nval_size = 10000\n[network]\nlayer_sizes = 784, 8, 10\n"
    code, _, err = run(capsys, "train", "--config", cfg_file(tmp_path, text), "--out", str(tmp_path / "o"))
    assert code == 1 and "val_size" in err
