"""Central finite-difference verification of the end-to-end gradients.

Each instance builds a random model and batch, fixes the GCL noise, and
compares every analytic parameter gradient with
``(L(w + h) - L(w - h)) / 2h``. The error of an instance is the largest
per-tensor ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.

Instances whose loss is saturated (below ``MIN_LOSS``) are redrawn: their
gradients are of the order of the loss itself, while the differences carry
~1e-16 / h absolute rounding noise, so the comparison says nothing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .datagen import exponential_profile
from .losses import GaussianCloudConfig, LossSpec, draw_epsilon
from .model import init_model
from .numerics import Rng
from .pipeline import loss_and_grads
from .schedules import cloud_schedule

DEFAULT_FAMILIES = ("ce", "cosface:0.35", "arcface-style:0.5", "ldam:0.5", "gcl-e", "gcl-a")
STEP = 1e-6
TOLERANCE = 1e-5
MIN_LOSS = 1e-3
MAX_REDRAWS = 100


@dataclass
class CheckResult:
    family: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _relative_error(a, n):
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_instance(family: str, feature_dim: int, num_classes: int, batch: int, rng: Rng,
                   input_dim: int = 5, hidden=(6,), step: float = STEP, scale: float = 30.0) -> float:
    """Largest per-tensor relative error for one random instance."""
    profile = exponential_profile(200, 20, num_classes)
    spec = LossSpec.parse(family, scale=scale)
    if spec.is_gcl:
        spec = LossSpec(spec.family, spec.margin, spec.scale, GaussianCloudConfig(),
                        cloud_schedule(profile, "log"))
    for _ in range(MAX_REDRAWS):
        model = init_model(input_dim, hidden, feature_dim, num_classes, rng)
        # nonzero biases so their gradients are exercised generically
        for key in model.params:
            if key.endswith(".bias"):
                model.params[key] += 0.1 * rng.normal(model.params[key].shape)
        inputs = rng.normal((batch, input_dim))
        labels = np.floor(rng.uniform(batch) * num_classes).astype(np.int64)
        epsilon = draw_epsilon(spec.cloud, rng, batch, num_classes) if spec.is_gcl else None
        result = loss_and_grads(model, spec, inputs, labels, profile, epsilon=epsilon)
        if result.loss >= MIN_LOSS:
            break
    analytic = result.grads
    worst = 0.0
    for key, param in model.params.items():
        numeric = np.zeros_like(param)
        flat, nflat = param.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_and_grads(model, spec, inputs, labels, profile, epsilon=epsilon).loss
            flat[i] = orig - step
            minus = loss_and_grads(model, spec, inputs, labels, profile, epsilon=epsilon).loss
            flat[i] = orig
            nflat[i] = (plus - minus) / (2 * step)
        worst = max(worst, _relative_error(analytic[key], numeric))
    return worst


def check_family(family: str, instances: int = 20, seed: int = 0, tolerance: float = TOLERANCE) -> CheckResult:
    """Cycle through D in {4, 16}, C in {3, 10}, batch in {1, 8}."""
    rng = Rng(seed)
    grid = itertools.cycle(itertools.product((4, 16), (3, 10), (1, 8)))
    worst = 0.0
    for _, (D, C, b) in zip(range(instances), grid):
        worst = max(worst, check_instance(family, D, C, b, rng))
    return CheckResult(family, instances, worst, tolerance)


def run_suite(families=DEFAULT_FAMILIES, instances: int = 20, seed: int = 0) -> list:
    return [check_family(f, instances, seed + i) for i, f in enumerate(families)]


def format_table(results) -> str:
    lines = ["family\tinstances\tmax_rel_error\ttolerance\tstatus"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.family}\t{r.instances}\t{r.max_rel_error:.3e}\t{r.tolerance:.0e}\t{status}")
    return "\n".join(lines) + "\n"
