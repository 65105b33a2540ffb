import glob
import os

import pytest

from holoprop.config import SCHEMA, ConfigError, load_config

from conftest import CONFIGS


def write(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


def test_defaults_build_every_object():
    cfg = load_config(environ={})
    assert cfg.network_spec().layer_sizes == (6, 4, 4, 4)
    assert cfg.settle_config().nudge.max_steps == 50
    assert cfg.nudge_path().n_points == 24
    assert cfg.grid().resolution == 201


def test_file_values_are_typed(tmp_path):
    cfg = load_config(write(tmp_path, "[network]\nlayer_sizes = 784, 256, 10\n[settle]\nwarm_start = no\n"
                                      "[train]\nlearning_rate = 0.1 0.05\n[experiment]\nunits = 1:2, 2:0\n"),
                      environ={})
    assert cfg.network_spec().layer_sizes == (784, 256, 10)
    assert cfg["settle"]["warm_start"] is False
    assert cfg.train_config().learning_rate == (0.1, 0.05)
    assert cfg["experiment"]["units"] == ((1, 2), (2, 0))


@pytest.mark.parametrize("text,match", [
    ("[bogus]\nx = 1\n", "unknown section"),
    ("[run]\nseeds = 1\n", "unknown key"),
    ("[run]\nseed = one\n", "seed"),
    ("[settle]\nwarm_start = maybe\n", "boolean"),
    ("[network]\nactivation = relu\n", "activation"),
    ("[data]\nsource = cifar\n", "source"),
    ("[run]\nworkers = 0\n", "workers"),
    ("[run]\nseed = -1\n", "unsigned"),
    ("[nudge]\nn_points = 1\n", "at least 2"),
    ("not an ini", "header"),
])
def test_bad_configs(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, text), environ={})


def test_environment_overrides_file(tmp_path):
    path = write(tmp_path, "[train]\nepochs = 5\n")
    cfg = load_config(path, environ={"HOLOPROP_TRAIN__EPOCHS": "7", "HOLOPROP_NUDGE__RADIUS": "0.4", "OTHER": "x"})
    assert cfg["train"]["epochs"] == 7 and cfg["nudge"]["radius"] == 0.4


@pytest.mark.parametrize("name", ["HOLOPROP_TRAIN__EPOCH", "HOLOPROP_EPOCHS", "HOLOPROP_NOPE__X"])
def test_bad_environment_keys(name):
    with pytest.raises(ConfigError):
        load_config(environ={name: "1"})


def test_overrides_win_over_environment():
    cfg = load_config(overrides={("run", "seed"): 9}, environ={"HOLOPROP_RUN__SEED": "4"})
    assert cfg["run"]["seed"] == 9


def test_resolved_config_round_trips(tmp_path):
    cfg = load_config(write(tmp_path, "[experiment]\nvalues = 0.1, 0.2\nunits = 1:0\n[train]\nschedule = cosine\n"),
                      environ={})
    out = cfg.write(str(tmp_path / "out"))
    again = load_config(out, environ={})
    assert again.values == cfg.values
    assert set(again.values) == set(SCHEMA)


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(CONFIGS, "*.cfg"))),
                         ids=lambda p: os.path.basename(p))
def test_shipped_configs_validate(path):
    load_config(path, environ={})
