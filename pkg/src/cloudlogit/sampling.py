"""Re-balancing samplers.

Per-sample weights before normalization:

    ibs        1                      (instance-balanced)
    srs        n_j ** -0.5            (square-root)
    cbs        1 / n_j                (class-balanced)
    ens:beta   1 / effective_number   (effective-number)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import ClassProfile
from .errors import ConfigurationError, InvalidArgumentError
from .numerics import Rng

KINDS = ("ibs", "srs", "cbs", "ens")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown sampler {self.kind!r}; expected one of {KINDS}")
        if self.kind == "ens" and not 0 <= self.beta < 1:
            raise InvalidArgumentError(f"beta must lie in [0, 1), got {self.beta}")

    @classmethod
    def parse(cls, text: str) -> SamplerSpec:
        text = text.strip().lower()
        if text.startswith("ens"):
            _, _, beta = text.partition(":")
            try:
                return cls("ens", float(beta) if beta else 0.999)
            except ValueError:
                raise ConfigurationError(f"bad beta in sampler {text!r}") from None
        return cls(text)

    def __str__(self):
        return f"ens:{self.beta!r}" if self.kind == "ens" else self.kind


@dataclass(frozen=True)
class SampleProbabilities:
    p: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.p)

    def class_totals(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, weights=self.p, minlength=num_classes)


def effective_numbers(profile: ClassProfile, beta: float) -> np.ndarray:
    """``(1 - beta**n_j) / (1 - beta)``.

    The constant factor N that some write in front cancels once the sampling
    rates are normalized, so it is left out.
    """
    if not 0 <= beta < 1:
        raise InvalidArgumentError(f"beta must lie in [0, 1), got {beta}")
    n = profile.as_array()
    if beta == 0:
        return np.ones_like(n)
    return -np.expm1(n * np.log(beta)) / (1.0 - beta)


def class_weights(profile: ClassProfile, spec: SamplerSpec) -> np.ndarray:
    n = profile.as_array()
    if spec.kind == "ibs":
        return np.ones_like(n)
    if spec.kind == "srs":
        return n ** -0.5
    if spec.kind == "cbs":
        return 1.0 / n
    return 1.0 / effective_numbers(profile, spec.beta)


def sampling_probabilities(profile: ClassProfile, spec: SamplerSpec, labels=None) -> SampleProbabilities:
    """Per-sample draw probabilities summing to one.

    Without ``labels`` the samples are taken to be grouped by class in index
    order, matching ``profile.counts``.
    """
    if isinstance(spec, str):
        spec = SamplerSpec.parse(spec)
    if labels is None:
        labels = np.repeat(np.arange(profile.num_classes), profile.counts)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != profile.total:
        raise InvalidArgumentError(f"{len(labels)} labels for a profile of {profile.total} samples")
    weights = class_weights(profile, spec)[labels]
    return SampleProbabilities(weights / weights.sum(), labels)


def draw_batch(probs: SampleProbabilities, b: int, rng: Rng, replacement: bool = True) -> np.ndarray:
    """Draw ``b`` sample indices.

    With replacement: inverse-CDF lookup of ``b`` uniforms. Without: the ``b``
    largest keys ``log(u) / p`` (weighted reservoir ordering).
    """
    n = len(probs)
    if b < 1:
        raise InvalidArgumentError("batch size must be positive")
    if replacement:
        cdf = np.cumsum(probs.p)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, rng.uniform(b), side="right")
        return np.minimum(idx, n - 1)
    if b > n:
        raise InvalidArgumentError(f"cannot draw {b} of {n} samples without replacement")
    keys = np.log1p(-rng.uniform(n)) / probs.p
    return np.argsort(-keys, kind="stable")[:b]
