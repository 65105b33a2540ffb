"""INI run configuration with a fixed schema.

Every key has a type and a default; unknown sections or keys are errors.
Any key can be overridden from the environment as
``HOLOPROP_<SECTION>__<KEY>`` (for example ``HOLOPROP_TRAIN__EPOCHS=3``).
"""

from __future__ import annotations

import configparser
import os

from .dynamics import NudgePath, SettleConfig
from .estimators import OnlineConfig
from .experiments import GridSpec
from .model import NetworkSpec
from .trainer import TrainConfig

ENV_PREFIX = "HOLOPROP_"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text: str):
        items = [t for t in text.replace(",", " ").split() if t]
        return tuple(conv(t) for t in items)
    parse.__name__ = f"list_{conv.__name__}"
    return parse


def _str(text: str) -> str:
    return text.strip()


def _units(text: str):
    """``layer:index`` pairs separated by commas or spaces."""
    out = []
    for item in text.replace(",", " ").split():
        layer, idx = item.split(":")
        out.append((int(layer), int(idx)))
    return tuple(out)


def _float_or_list(text: str):
    vals = _list(float)(text)
    return vals[0] if len(vals) == 1 else vals


SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
        "out": (_str, "runs/out"),
        "workers": (int, 1),
        "checkpoint": (_str, ""),          # eval: empty means <out>/checkpoint.hckpt
    },
    "network": {
        "kind": (_str, "mlp"),
        "layer_sizes": (_list(int), (6, 4, 4, 4)),
        "input_shape": (_list(int), ()),
        "channels": (_list(int), ()),
        "kernel_sizes": (_list(int), ()),
        "strides": (_list(int), ()),
        "paddings": (_list(int), ()),
        "pool_window": (int, 2),
        "pool_stride": (int, 2),
        "pool_tau": (float, 1.0),
        "activation": (_str, "shifted_sigmoid"),
        "init": (_str, "fan_in"),
        "init_scale": (float, 1.0),
    },
    "data": {
        "source": (_str, "synthetic"),     # synthetic | mnist
        "path": (_str, "data/mnist_subset"),
        "n_samples": (int, 1),             # examples per experiment minibatch
        "limit": (int, 0),                 # 0 = use the whole file
        "val_size": (int, 10000),
    },
    "settle": {
        "t_free": (int, 200),
        "t_nudge": (int, 50),
        "residual_tol": (float, 1e-10),
        "warm_start": (_bool, True),
        "noise_std": (float, 0.0),
    },
    "nudge": {
        "radius": (float, 0.1),
        "n_points": (int, 24),
        "phase": (float, 0.0),
    },
    "online": {
        "t_osc": (int, 300),
        "t_plas": (int, 900),
        "periods": (int, 10),
    },
    "train": {
        "estimator": (_str, "hep"),
        "batch_size": (int, 20),
        "learning_rate": (_float_or_list, 5e-2),
        "final_lr": (_float_or_list, 0.0),
        "momentum": (float, 0.0),
        "weight_decay": (_float_or_list, 0.0),
        "epochs": (int, 50),
        "schedule": (_str, "constant"),
        "eval_steps": (int, 200),
        "resume": (_bool, False),          # continue from <out>/checkpoint.hckpt if present
    },
    "experiment": {
        "re_min": (float, -0.6),
        "re_max": (float, 0.6),
        "im_min": (float, -0.6),
        "im_max": (float, 0.6),
        "resolution": (int, 201),
        "map_steps": (int, 200),
        "map_threshold": (float, 1e-6),
        "map_init": (_str, "zeros"),
        "axis": (_str, "radius"),
        "values": (_list(float), (0.001, 0.01, 0.05, 0.1, 0.2, 0.3)),
        "estimators": (_list(_str), ("hep", "classic")),
        "units": (_units, ((1, 0), (1, 1))),
        "t_osc_values": (_list(int), (40, 100, 200, 400)),
        "oracle_steps": (int, 1000),
        "oracle_tol": (float, 1e-10),
    },
}


class RunConfig:
    """Resolved configuration: ``cfg["train"]["epochs"]`` style access plus typed builders."""

    def __init__(self, values: dict[str, dict]):
        self.values = values

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # -- builders -----------------------------------------------------------

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(**self.values["network"])

    def settle_config(self) -> SettleConfig:
        s = self.values["settle"]
        return SettleConfig(s["t_free"], s["residual_tol"], s["warm_start"], s["noise_std"],
                            self.values["run"]["seed"], s["t_nudge"])

    def nudge_path(self) -> NudgePath:
        n = self.values["nudge"]
        return NudgePath(n["radius"], n["n_points"], n["phase"])

    def online_config(self) -> OnlineConfig:
        o = self.values["online"]
        return OnlineConfig(o["t_osc"], o["t_plas"], o["periods"], self.values["nudge"]["radius"])

    def grid(self) -> GridSpec:
        e = self.values["experiment"]
        return GridSpec(e["re_min"], e["re_max"], e["im_min"], e["im_max"], e["resolution"])

    def train_config(self) -> TrainConfig:
        t, s, n, o = (self.values[k] for k in ("train", "settle", "nudge", "online"))
        return TrainConfig(
            batch_size=t["batch_size"], learning_rate=t["learning_rate"], final_lr=t["final_lr"],
            momentum=t["momentum"], weight_decay=t["weight_decay"], epochs=t["epochs"],
            schedule=t["schedule"], estimator=t["estimator"], radius=n["radius"],
            n_points=n["n_points"], t_free=s["t_free"], t_nudge=s["t_nudge"],
            residual_tol=s["residual_tol"], noise_std=s["noise_std"], t_osc=o["t_osc"],
            t_plas=o["t_plas"], eval_steps=t["eval_steps"], seed=self.values["run"]["seed"])

    def validate(self):
        """Build every typed object once so inconsistent values fail early."""
        try:
            self.network_spec()
            self.settle_config()
            self.nudge_path()
            self.online_config()
            self.grid()
            self.train_config()
        except (ValueError, TypeError, KeyError) as err:
            raise ConfigError(str(err)) from err
        if self.values["data"]["source"] not in ("synthetic", "mnist"):
            raise ConfigError("data.source must be 'synthetic' or 'mnist'")
        if not 0 <= self.values["run"]["seed"] < 2**64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        if self.values["run"]["workers"] < 1:
            raise ConfigError("run.workers must be >= 1")
        return self

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, value in keys.items():
                lines.append(f"{key} = {format_value(value)}")
            lines.append("")
        return "\n".join(lines)

    def write(self, directory: str) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, "resolved.cfg")
        with open(path, "w") as fh:
            fh.write(self.to_ini())
        return path


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{a}:{b}" for a, b in value)
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(section, key, text):
    conv, _ = SCHEMA[section][key]
    try:
        return conv(text)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"[{section}] {key} = {text!r}: {err}") from err


def load_config(path: str | None = None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``HOLOPROP_*`` variables, then ``overrides``.

    ``overrides`` maps ``(section, key)`` to already-typed values.
    """
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from err
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, text in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
                values[section][key] = _convert(section, key, text)
    env = os.environ if environ is None else environ
    for name, text in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        body = name[len(ENV_PREFIX):].lower()
        if "__" not in body:
            raise ConfigError(f"{name}: expected {ENV_PREFIX}<SECTION>__<KEY>")
        section, key = body.split("__", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"{name}: no such config key [{section}] {key}")
        values[section][key] = _convert(section, key, text)
    for (section, key), value in (overrides or {}).items():
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"no such config key [{section}] {key}")
        values[section][key] = value
    return RunConfig(values).validate()
