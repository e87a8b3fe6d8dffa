"""Experiment configuration and its INI file format.

Files are flat ``key = value`` pairs grouped into sections; section names
are only for readability, every key is globally unique. Command-line
``--set key=value`` overrides win over file values, which win over the
defaults below. ``section.key`` is accepted as an override spelling too.
"""

import configparser
import io
from dataclasses import asdict, dataclass, fields

from .exceptions import ParameterError

MODES = ("full", "tct_only", "ssfl_only", "supervised")
AGGREGATORS = ("fedavg", "fedopt", "sma")

SECTIONS = {
    "data": (
        "feature_file", "num_classes", "samples_per_class", "timesteps",
        "dim_a", "dim_b", "latent_dim", "noise_sigma", "sample_variation",
        "private_dim", "private_scale",
    ),
    "split": ("num_clients", "alpha", "r_l", "r_m", "test_fraction", "drop_on_server"),
    "model": ("hidden", "embed"),
    "train": (
        "rounds", "local_epochs", "batch_size", "window_fraction", "tau",
        "local_lr", "head_lr", "head_epochs", "pair_noise",
    ),
    "aggregate": ("aggregator", "baseline", "server_momentum", "server_lr", "sma_include_self"),
    "run": ("mode", "seed", "workers"),
}


@dataclass
class ExperimentConfig:
    # data
    feature_file: str = ""
    num_classes: int = 4
    samples_per_class: int = 200
    timesteps: int = 16
    dim_a: int = 32
    dim_b: int = 32
    latent_dim: int = 12
    noise_sigma: float = 1.0
    sample_variation: float = 1.0
    private_dim: int = 8
    private_scale: float = 3.0
    # split
    num_clients: int = 8
    alpha: float = 0.1
    r_l: float = 0.9
    r_m: float = 0.0
    test_fraction: float = 0.1
    drop_on_server: bool = False
    # model
    hidden: int = 32
    embed: int = 16
    # train
    rounds: int = 200
    local_epochs: int = 1
    batch_size: int = 16
    window_fraction: float = 0.6
    tau: float = 0.1
    local_lr: float = 0.1
    head_lr: float = 0.1
    head_epochs: int = 5
    pair_noise: float = 0.01
    # aggregate
    aggregator: str = "sma"
    baseline: str = "fedavg"
    server_momentum: float = 0.9
    server_lr: float = 1.0
    sma_include_self: bool = True
    # run
    mode: str = "full"
    seed: int = 0
    workers: int = 1

    def validate(self):
        problems = []

        def need(cond, msg):
            if not cond:
                problems.append(msg)

        for name in ("num_classes", "samples_per_class", "timesteps", "dim_a", "dim_b",
                     "latent_dim", "num_clients", "hidden", "embed", "rounds",
                     "batch_size", "workers"):
            need(getattr(self, name) >= 1, f"{name}: must be >= 1, got {getattr(self, name)}")
        for name in ("local_epochs", "head_epochs", "private_dim"):
            need(getattr(self, name) >= 0, f"{name}: must be >= 0")
        need(self.alpha > 0, f"alpha: must be > 0, got {self.alpha}")
        need(0 <= self.r_l < 1, f"r_l: must lie in [0, 1), got {self.r_l}")
        need(0 <= self.r_m < 1, f"r_m: must lie in [0, 1), got {self.r_m}")
        need(0 <= self.test_fraction < 1, f"test_fraction: must lie in [0, 1), got {self.test_fraction}")
        need(0.5 <= self.window_fraction <= 1, f"window_fraction: must lie in [0.5, 1], got {self.window_fraction}")
        need(self.tau > 0, f"tau: must be > 0, got {self.tau}")
        for name in ("local_lr", "head_lr", "noise_sigma", "sample_variation", "private_scale", "pair_noise", "server_lr"):
            need(getattr(self, name) >= 0, f"{name}: must be >= 0")
        need(0 <= self.server_momentum < 1, f"server_momentum: must lie in [0, 1), got {self.server_momentum}")
        need(self.mode in MODES, f"mode: must be one of {MODES}, got {self.mode!r}")
        need(self.aggregator in AGGREGATORS, f"aggregator: must be one of {AGGREGATORS}, got {self.aggregator!r}")
        need(self.baseline in ("fedavg", "fedopt"), f"baseline: must be fedavg or fedopt, got {self.baseline!r}")
        if problems:
            raise ParameterError("invalid configuration:\n  " + "\n  ".join(problems))
        return self

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return ExperimentConfig(**data)


_TYPE_OF_DEFAULT = {f.name: type(getattr(ExperimentConfig(), f.name)) for f in fields(ExperimentConfig)}


def coerce(key, text):
    """Parse ``text`` into the type of config field ``key``."""
    if key not in _TYPE_OF_DEFAULT:
        raise ParameterError(f"unknown config key {key!r}")
    kind = _TYPE_OF_DEFAULT[key]
    text = str(text).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ParameterError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None
    return text


def _normalize_key(key):
    key = key.strip()
    if "." in key:
        section, _, key = key.partition(".")
        if section not in SECTIONS or key not in SECTIONS[section]:
            raise ParameterError(f"unknown config key {section}.{key!r}")
    return key


def parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ParameterError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        key = _normalize_key(key)
        out[key] = coerce(key, value)
    return out


def loads(text, overrides=None):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParameterError(f"config syntax error: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ParameterError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in SECTIONS[section]:
                raise ParameterError(f"unknown config key {key!r} in section [{section}]")
            values[key] = coerce(key, value)
    values.update(parse_overrides(overrides))
    return ExperimentConfig(**values).validate()


def load(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParameterError(f"cannot read config file {path}: {exc.strerror}") from None
    return loads(text, overrides)


def dumps(cfg):
    buf = io.StringIO()
    for section, keys in SECTIONS.items():
        buf.write(f"[{section}]\n")
        for key in keys:
            value = getattr(cfg, key)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            buf.write(f"{key} = {value}\n")
        buf.write("\n")
    return buf.getvalue()
