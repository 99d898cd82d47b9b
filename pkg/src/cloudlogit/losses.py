"""Adjusted logits, softmax cross-entropy and their gradients.

Every cosine-based family is one of two shapes applied to the cosine score
``c = cos(theta)``:

* additive:  ``z = s * (c - b)``
* angular:   ``z = s * cos(theta + a)``, evaluated as
  ``s * (c * cos(a) - sin(theta) * sin(a))`` with ``sin(theta) = sqrt(1 - c^2)``

============  ==========  =====================================
family        shape       offset
============  ==========  =====================================
cosface:m     additive    b = m on the target class
ldam:m        additive    b = m_y on the target class
gcl-e         additive    b = delta_j * |eps|, every class
arcface:m     angular     a = m on the target class
gcl-a         angular     a = delta_j * angular_scale * |eps|
============  ==========  =====================================

``ce`` works on raw linear logits and is left untouched. Outside training
all offsets vanish, so every cosine family evaluates to ``s * c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import ClassProfile
from .errors import ConfigurationError, DegenerateInputError, InvalidArgumentError
from .numerics import Rng, sample_clamped_gaussian
from .schedules import CloudSchedule

FAMILIES = ("ce", "cosface", "arcface", "ldam", "gcl-e", "gcl-a")
_ADDITIVE = ("cosface", "ldam", "gcl-e")
_ANGULAR = ("arcface", "gcl-a")
_ALIASES = {"arcface-style": "arcface", "gcle": "gcl-e", "gcla": "gcl-a", "norm": "cosface"}

# beyond this |cos theta| the angular-logit derivative is treated as zero
COS_CLAMP = 1.0 - 1e-12


@dataclass(frozen=True)
class GaussianCloudConfig:
    mu: float = 0.0
    sigma: float = 1.0 / 3.0
    lo: float = -1.0
    hi: float = 1.0
    angular_scale: float = math.pi / 2
    shared: bool = True  # one draw per sample for all classes

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgumentError("sigma must be positive")
        if not self.lo < self.hi:
            raise InvalidArgumentError("empty clamp range")
        if not self.angular_scale > 0:
            raise InvalidArgumentError("angular_scale must be positive")


@dataclass(frozen=True)
class LossSpec:
    family: str
    margin: float = 0.0
    scale: float = 30.0
    cloud: GaussianCloudConfig = field(default_factory=GaussianCloudConfig)
    schedule: CloudSchedule | None = None

    def __post_init__(self):
        family = _ALIASES.get(self.family, self.family)
        if family not in FAMILIES:
            raise ConfigurationError(f"unknown loss family {self.family!r}")
        object.__setattr__(self, "family", family)
        if self.margin < 0:
            raise InvalidArgumentError("margin must be non-negative")
        if not self.scale > 0:
            raise InvalidArgumentError("scale must be positive")

    @classmethod
    def parse(cls, text: str, **kwargs) -> LossSpec:
        """Build from ``ce``, ``cosface:<m>``, ``arcface-style:<m>``,
        ``ldam:<max_margin>``, ``gcl-e`` or ``gcl-a``."""
        name, _, arg = text.strip().lower().partition(":")
        name = _ALIASES.get(name, name)
        defaults = {"cosface": 0.35, "arcface": 0.5, "ldam": 0.5}
        if name == "cosface" and text.strip().lower() == "norm":
            arg = "0"
        if arg and name not in defaults:
            raise ConfigurationError(f"loss {name!r} takes no argument")
        try:
            margin = float(arg) if arg else defaults.get(name, 0.0)
        except ValueError:
            raise ConfigurationError(f"bad margin in loss {text!r}") from None
        return cls(name, margin=margin, **kwargs)

    def __str__(self):
        if self.family == "arcface":
            return f"arcface-style:{self.margin:g}"
        if self.family in ("cosface", "ldam"):
            return f"{self.family}:{self.margin:g}"
        return self.family

    @property
    def uses_cosine(self) -> bool:
        return self.family != "ce"

    @property
    def is_gcl(self) -> bool:
        return self.family in ("gcl-e", "gcl-a")

    def cloud_sizes(self) -> np.ndarray:
        if self.schedule is None:
            raise ConfigurationError(f"{self.family} needs a cloud-size schedule")
        return self.schedule.normalized


class PerturbedLogits:
    """Training or eval logits plus what the backward pass needs.

    ``offset`` is the margin ``b`` (additive families) or angle ``a``
    (angular families), broadcastable to ``logits``. For angular GCL with a
    shared draw it is only materialised on first access.
    """

    def __init__(self, logits, scores, epsilon=None, offset=None, training=True,
                 dz_dscores=None, offset_factors=None):
        self.logits = logits
        self.scores = scores  # cosine scores (raw logits for ce)
        self.epsilon = epsilon  # signed draws, (batch, 1) or (batch, C)
        self.training = training
        self.dz_dscores = dz_dscores  # angular families only, includes the scale
        self._offset = offset
        self._offset_factors = offset_factors

    @property
    def offset(self):
        if self._offset is None and self._offset_factors is not None:
            alpha, delta = self._offset_factors
            self._offset = np.multiply.outer(alpha, delta)
        return self._offset


def ldam_margins(profile: ClassProfile, max_margin: float) -> np.ndarray:
    """Margins proportional to ``n_j ** -1/4``, the largest equal to ``max_margin``."""
    m = profile.as_array() ** -0.25
    return m * (max_margin / m.max())


def cosine_scores(features, W) -> np.ndarray:
    """``cos`` of the angle between each feature row and each column of ``W``."""
    f_norm = np.linalg.norm(features, axis=1, keepdims=True)
    w_norm = np.linalg.norm(W, axis=0, keepdims=True)
    if np.any(f_norm == 0) or np.any(w_norm == 0):
        raise DegenerateInputError("zero-norm feature or class anchor")
    return np.clip((features / f_norm) @ (W / w_norm), -1.0, 1.0)


def cosine_scores_backward(features, W, grad_scores):
    """Gradients of a loss w.r.t. ``features`` and ``W`` given dL/dcos."""
    f_norm = np.linalg.norm(features, axis=1, keepdims=True)
    w_norm = np.linalg.norm(W, axis=0, keepdims=True)
    f_hat = features / f_norm
    w_hat = W / w_norm
    g_fhat = grad_scores @ w_hat.T
    g_what = f_hat.T @ grad_scores
    # project out the radial component, then undo the scaling
    g_f = (g_fhat - f_hat * np.sum(g_fhat * f_hat, axis=1, keepdims=True)) / f_norm
    g_w = (g_what - w_hat * np.sum(g_what * w_hat, axis=0, keepdims=True)) / w_norm
    return g_f, g_w


def draw_epsilon(cloud: GaussianCloudConfig, rng: Rng, batch: int, num_classes: int) -> np.ndarray:
    shape = (batch, 1) if cloud.shared else (batch, num_classes)
    return sample_clamped_gaussian(rng, cloud.mu, cloud.sigma, cloud.lo, cloud.hi, shape)


def _target_mask(labels, shape) -> np.ndarray:
    mask = np.zeros(shape)
    mask[np.arange(shape[0]), labels] = 1.0
    return mask


def _cos_sin(a):
    """cos and sin of angles in ``[0, pi]`` for the price of one cosine.

    sin comes from ``sqrt(1 - cos^2)``; below 1e-3 rad, where that loses
    digits, a Taylor series takes over.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.size and (a.min() < 0 or a.max() > math.pi):
        return np.cos(a), np.sin(a)
    cos_a = np.cos(a)
    sin_a = np.multiply(cos_a, cos_a)
    np.subtract(1.0, sin_a, out=sin_a)
    np.sqrt(sin_a, out=sin_a)
    small = a < 1e-3
    small &= a > 0
    if small.any():
        x = a[small]
        x2 = x * x
        sin_a[small] = x * (1.0 - x2 / 6.0 * (1.0 - x2 / 20.0))
    return cos_a, sin_a


_SERIES_EVEN = np.arange(0, 24, 2)
_SERIES_COS = np.array([(-1) ** (n // 2) / math.factorial(n) for n in _SERIES_EVEN])
_SERIES_SIN = np.array([(-1) ** (n // 2) / math.factorial(n + 1) for n in _SERIES_EVEN])


_DELTA_POWERS: dict = {}


def _delta_powers(delta):
    # delta is fixed for a run, so its powers are built once
    hit = _DELTA_POWERS.get(id(delta))
    if hit is None or hit[0] is not delta:
        even = np.power(delta[None, :], _SERIES_EVEN[:, None])
        hit = (delta, even, even * delta, float(delta.max()))
        _DELTA_POWERS.clear()
        _DELTA_POWERS[id(delta)] = hit
    return hit[1:]


def _outer_cos_sin(alpha, delta, scale=1.0):
    """``scale`` times cos and sin of ``alpha[:, None] * delta[None, :]``,
    without elementwise trig.

    The Maclaurin series separates into powers of ``alpha`` and ``delta``, so
    each matrix is one ``(B, 12) @ (12, C)`` product. Valid for products up to
    pi/2, where the truncation error is below 1e-19.
    """
    d_even, d_odd, _ = _delta_powers(delta)
    a_even = np.power(alpha[:, None], _SERIES_EVEN)
    cos_a = (a_even * (scale * _SERIES_COS)) @ d_even
    sin_a = (a_even * (alpha[:, None] * (scale * _SERIES_SIN))) @ d_odd
    return cos_a, sin_a


def _angular(scores, scale, a, factors=None):
    """Angular logits ``scale * cos(theta + a)`` and their derivative in ``cos(theta)``.

    The logit itself is exact up to the poles; only the derivative, which
    diverges there, is cut to zero once ``|c| >= COS_CLAMP``.
    """
    c = scores
    near_pole = c.max() >= COS_CLAMP or c.min() <= -COS_CLAMP
    sin_theta = np.multiply(c, c)
    np.subtract(1.0, sin_theta, out=sin_theta)
    if near_pole:
        np.maximum(sin_theta, 0.0, out=sin_theta)
    np.sqrt(sin_theta, out=sin_theta)
    if factors is not None:
        cos_a, sin_a = _outer_cos_sin(*factors, scale)
    else:
        cos_a, sin_a = _cos_sin(a)
        cos_a *= scale
        sin_a *= scale
    z = np.multiply(c, cos_a)
    z -= np.multiply(sin_theta, sin_a)
    # dz/dc = cos a + sin a * c / sin theta
    if near_pole:
        pole = np.abs(c) >= COS_CLAMP
        sin_theta[pole] = 1.0
    grad = sin_a
    grad *= c
    grad /= sin_theta
    grad += cos_a
    if near_pole:
        grad[pole] = 0.0
    return z, grad


def adjusted_logits(spec: LossSpec, scores, labels, profile: ClassProfile | None = None,
                    rng: Rng | None = None, training: bool = True, epsilon=None) -> PerturbedLogits:
    """Logits for ``spec`` from cosine scores (raw linear logits for ``ce``).

    GCL families draw their noise from ``rng`` unless ``epsilon`` is given.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if spec.family == "ce":
        return PerturbedLogits(scores.copy(), scores, training=training)
    s = spec.scale
    if not training:
        return PerturbedLogits(s * scores, scores, training=False)

    batch, num_classes = scores.shape
    eps = None
    factors = None
    if spec.is_gcl:
        delta = spec.cloud_sizes()
        if len(delta) != num_classes:
            raise ConfigurationError(f"schedule has {len(delta)} classes, scores have {num_classes}")
        if epsilon is None:
            if rng is None:
                raise InvalidArgumentError("GCL training needs an rng or explicit epsilon")
            epsilon = draw_epsilon(spec.cloud, rng, batch, num_classes)
        eps = np.asarray(epsilon, dtype=np.float64)
        if eps.ndim == 1:
            eps = eps[:, None]
        if spec.family == "gcl-e":
            offset = delta * np.abs(eps)
        else:
            alpha = spec.cloud.angular_scale * np.abs(eps)
            if alpha.shape[1] == 1 and alpha.max() * _delta_powers(delta)[2] <= math.pi / 2:
                factors = (alpha[:, 0], delta)
                offset = None
            else:
                offset = delta * alpha
    elif spec.family == "ldam":
        if profile is None:
            raise ConfigurationError("ldam needs the training class profile")
        margins = ldam_margins(profile, spec.margin)
        offset = _target_mask(labels, scores.shape) * margins[labels][:, None]
    else:
        offset = _target_mask(labels, scores.shape) * spec.margin

    if spec.family in _ADDITIVE:
        return PerturbedLogits(s * (scores - offset), scores, eps, offset, True)
    logits, grad = _angular(scores, s, offset, factors)
    return PerturbedLogits(logits, scores, eps, offset, True, grad, factors)


def adjusted_logits_backward(spec: LossSpec, perturbed: PerturbedLogits, grad_logits) -> np.ndarray:
    """dL/dscores from dL/dlogits. The noise is a constant here."""
    if spec.family == "ce":
        return grad_logits
    s = spec.scale
    if not perturbed.training or spec.family in _ADDITIVE:
        return s * grad_logits
    return grad_logits * perturbed.dz_dscores


def softmax_ce(logits, labels):
    """Mean cross-entropy and row-wise softmax, max-shift stabilised."""
    if isinstance(logits, PerturbedLogits):
        logits = logits.logits
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -np.mean(log_probs[np.arange(len(labels)), labels])
    return float(loss), np.exp(log_probs)


# the target entry -(1 - p_y) lies strictly inside (-1, 0); these are the
# representable values closest to its ends
_TARGET_LO = np.nextafter(-1.0, 0.0)
_TARGET_HI = np.nextafter(0.0, -1.0)


def grad_wrt_logits(probs, labels, mean: bool = True) -> np.ndarray:
    """``p - onehot(y)``, divided by the batch size when ``mean``.

    The target entry is formed as minus the sum of the other probabilities,
    which keeps its small magnitudes exact when ``p_y`` rounds to 1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    grad = np.array(probs, dtype=np.float64)
    rows = np.arange(len(labels))
    grad[rows, labels] = 0.0
    grad[rows, labels] = np.clip(-grad.sum(axis=1), _TARGET_LO, _TARGET_HI)
    if mean:
        grad /= len(labels)
    return grad


def logit_curve(theta, delta: float, eps_norm: float, form: str, scale: float = 1.0,
                angular_scale: float = math.pi / 2) -> np.ndarray:
    """GCL logit of one class as a function of its angle."""
    theta = np.asarray(theta, dtype=np.float64)
    if form == "gcl-e":
        return scale * (np.cos(theta) - delta * eps_norm)
    if form == "gcl-a":
        return scale * np.cos(theta + delta * angular_scale * eps_norm)
    raise InvalidArgumentError(f"unknown form {form!r}")


def logit_curve_slope(theta, delta: float, eps_norm: float, form: str, scale: float = 1.0,
                      angular_scale: float = math.pi / 2) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if form == "gcl-e":
        return -scale * np.sin(theta)
    if form == "gcl-a":
        return -scale * np.sin(theta + delta * angular_scale * eps_norm)
    raise InvalidArgumentError(f"unknown form {form!r}")
