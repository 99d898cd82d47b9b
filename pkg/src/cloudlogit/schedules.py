"""Per-class cloud sizes.

Rarer classes get larger clouds. Supported kinds, selected by string:

    "log"      log(n_max / n_j)
    "pow:k"    n_max * n_j**(-k), k in (0, 1]  (e.g. "pow:1/3", "pow:1/4")
    "cos"      cos(n_j / n_max * pi / 2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .datagen import ClassProfile
from .errors import ConfigurationError, InvalidArgumentError


@dataclass(frozen=True)
class ScheduleKind:
    name: str  # "log" | "pow" | "cos"
    exponent: float = 0.0

    @classmethod
    def parse(cls, text: str) -> ScheduleKind:
        text = text.strip().lower()
        if text in ("log", "logarithmic"):
            return cls("log")
        if text in ("cos", "cosine"):
            return cls("cos")
        if text.startswith("pow:") or text.startswith("power:"):
            raw = text.split(":", 1)[1]
            try:
                k = float(Fraction(raw))
            except (ValueError, ZeroDivisionError):
                raise ConfigurationError(f"bad power exponent {raw!r}") from None
            if not 0 < k <= 1:
                raise ConfigurationError(f"power exponent must lie in (0, 1], got {k}")
            return cls("pow", k)
        raise ConfigurationError(f"unknown schedule {text!r}; expected log, pow:<k> or cos")

    def __str__(self):
        if self.name == "pow":
            frac = Fraction(self.exponent).limit_denominator(64)
            return f"pow:{frac}" if float(frac) == self.exponent else f"pow:{self.exponent!r}"
        return self.name


@dataclass(frozen=True)
class CloudSchedule:
    kind: ScheduleKind
    raw: np.ndarray
    normalized: np.ndarray


def raw_cloud_sizes(profile: ClassProfile, kind, log_base: float = math.e) -> np.ndarray:
    if isinstance(kind, str):
        kind = ScheduleKind.parse(kind)
    n = profile.as_array()
    n_max = float(profile.n_max)
    if kind.name == "log":
        return np.log(n_max / n) / math.log(log_base)
    if kind.name == "pow":
        return n_max * n ** (-kind.exponent)
    if kind.name == "cos":
        sizes = np.cos(n / n_max * (math.pi / 2))
        # cos(pi/2) evaluates to ~6e-17, not 0
        sizes[n == n_max] = 0.0
        return sizes
    raise ConfigurationError(f"unknown schedule kind {kind.name!r}")


def normalized_cloud_sizes(raw) -> np.ndarray:
    """Divide by the maximum. An all-zero input stays all-zero."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0):
        raise InvalidArgumentError("cloud sizes must be non-negative")
    top = raw.max()
    if top == 0:
        return np.zeros_like(raw)
    return raw / top


def cloud_schedule(profile: ClassProfile, kind) -> CloudSchedule:
    if isinstance(kind, str):
        kind = ScheduleKind.parse(kind)
    raw = raw_cloud_sizes(profile, kind)
    normalized = normalized_cloud_sizes(raw)
    raw.flags.writeable = False
    normalized.flags.writeable = False
    return CloudSchedule(kind, raw, normalized)
