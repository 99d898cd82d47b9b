"""Run configuration in INI form (``[section]`` headers, ``key = value`` lines).

Example::

    [data]
    source = synthetic        ; or "csv" with train_path / test_path
    classes = 10
    n_max = 500
    ratio = 100
    input_dim = 32
    class_spread = 0.45
    test_per_class = 100

    [model]
    hidden = 64               ; comma-separated widths, empty for none
    feature_dim = 32

    [train]
    seed = 0
    stage1_iters = 3000
    stage2_iters = 500
    batch_size = 64
    lr = 0.1
    milestones = 2500
    gamma = 0.2
    loss = gcl-e
    schedule = log
    sampler = cbs

    [eval]
    head_min = 100
    mid_min = 20
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .errors import ConfigurationError
from .pipeline import TrainConfig


@dataclass
class DataConfig:
    source: str = "synthetic"
    classes: int = 10
    n_max: int = 500
    ratio: float = 100.0
    input_dim: int = 32
    class_spread: float = 0.45
    test_per_class: int = 100
    train_path: str = ""
    test_path: str = ""


@dataclass
class ModelConfig:
    hidden: tuple = (64,)
    feature_dim: int = 32


@dataclass
class EvalConfig:
    head_min: int = 100
    mid_min: int = 20


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section in ("data", "model", "train", "eval"):
            obj = getattr(self, section)
            parser[section] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> RunConfig:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"unparseable config: {exc}") from None
        unknown = set(parser.sections()) - {"data", "model", "train", "eval"}
        if unknown:
            raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for section, kind in (("data", DataConfig), ("model", ModelConfig),
                              ("train", TrainConfig), ("eval", EvalConfig)):
            values = dict(parser[section]) if parser.has_section(section) else {}
            kwargs[section] = _build(kind, values, section)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_ini(fh.read())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str, default):
    value = value.strip()
    if isinstance(default, bool):
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value


def _build(kind, values: dict, section: str):
    defaults = kind()
    known = {f.name for f in fields(kind)}
    extra = set(values) - known
    if extra:
        raise ConfigurationError(f"unknown keys in [{section}]: {sorted(extra)}")
    parsed = {}
    for key, raw in values.items():
        try:
            parsed[key] = _parse(raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigurationError(f"[{section}] {key}: {exc}") from None
    return kind(**parsed)
