"""Feed-forward backbone with a bias-free cosine classifier.

Backbone: ``h_{k+1} = tanh(h_k @ W_k + b_k)`` for every hidden layer, then a
linear projection to the feature dimension (no activation). tanh keeps the
network smooth so finite-difference checks never straddle a kink.

Parameters live in an ordered ``dict`` keyed ``backbone.<k>.weight``,
``backbone.<k>.bias`` and ``classifier.weight``; gradient and velocity sets
use the same keys. Classifier anchors are stored unnormalized and normalized
on every forward pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InvalidArgumentError, ShapeError
from .numerics import Rng, l2_normalize

CLASSIFIER = "classifier.weight"

_ids = itertools.count()


@dataclass
class Model:
    layer_sizes: tuple  # (D_in, *hidden, D)
    num_classes: int
    params: dict = field(default_factory=dict)
    version: int = 0
    uid: int = field(default_factory=lambda: next(_ids))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def feature_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden(self) -> tuple:
        return tuple(self.layer_sizes[1:-1])

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def classifier(self) -> np.ndarray:
        return self.params[CLASSIFIER]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def backbone_keys(self):
        return [k for k in self.params if k.startswith("backbone.")]

    def copy(self) -> Model:
        return Model(self.layer_sizes, self.num_classes,
                     {k: v.copy() for k, v in self.params.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def expected_parameter_count(input_dim, hidden, feature_dim, num_classes) -> int:
    sizes = [input_dim, *hidden, feature_dim]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])) + feature_dim * num_classes


def init_model(input_dim: int, hidden, feature_dim: int, num_classes: int, rng: Rng) -> Model:
    """LeCun-normal weights ``N(0, 1/fan_in)``, zero biases, unit-norm anchors.

    Draw order: layer weights from input to output, then the classifier.
    """
    hidden = tuple(int(h) for h in hidden)
    sizes = (int(input_dim), *hidden, int(feature_dim))
    if min(sizes) < 1 or num_classes < 1:
        raise InvalidArgumentError(f"all dimensions must be >= 1, got {sizes} and C={num_classes}")
    params = {}
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"backbone.{k}.weight"] = rng.normal((fan_in, fan_out)) / np.sqrt(fan_in)
        params[f"backbone.{k}.bias"] = np.zeros(fan_out)
    params[CLASSIFIER] = l2_normalize(rng.normal((feature_dim, num_classes)), axis=0)
    return Model(sizes, int(num_classes), params)


@dataclass
class ForwardCache:
    model_uid: int
    model_version: int
    activations: list  # input to each layer


def _rowwise_matmul(a, b):
    # a single row takes the BLAS gemv path, which rounds differently from gemm
    if a.shape[0] == 1:
        return (np.concatenate([a, a]) @ b)[:1]
    return a @ b


def forward(model: Model, inputs):
    """Features for ``inputs`` plus the cache ``backward`` needs."""
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.input_dim:
        raise ShapeError(f"expected inputs of width {model.input_dim}, got shape {h.shape}")
    acts = []
    last = model.num_layers - 1
    for k in range(model.num_layers):
        acts.append(h)
        h = _rowwise_matmul(h, model.params[f"backbone.{k}.weight"]) + model.params[f"backbone.{k}.bias"]
        if k < last:
            h = np.tanh(h)
    return h, ForwardCache(model.uid, model.version, acts)


def backward(model: Model, cache: ForwardCache, grad_features, grad_classifier) -> dict:
    """Parameter gradients given dL/dfeatures and dL/dW (already through the
    cosine normalization)."""
    if cache.model_uid != model.uid or cache.model_version != model.version:
        raise ContractError("forward cache is stale or belongs to another model")
    grads = {}
    g = np.asarray(grad_features, dtype=np.float64)
    for k in reversed(range(model.num_layers)):
        if k < model.num_layers - 1:
            # h = tanh(pre) was the input to layer k + 1
            g = g * (1.0 - cache.activations[k + 1] ** 2)
        x = cache.activations[k]
        grads[f"backbone.{k}.weight"] = x.T @ g
        grads[f"backbone.{k}.bias"] = g.sum(axis=0)
        if k > 0:
            g = g @ model.params[f"backbone.{k}.weight"].T
    grads[CLASSIFIER] = np.asarray(grad_classifier, dtype=np.float64)
    return {k: grads[k] for k in model.params}


def sgd_step(model: Model, grads: dict, lr: float, momentum: float, velocity: dict | None = None,
             freeze_backbone: bool = False, weight_decay: float = 0.0):
    """Heavy-ball update ``v <- momentum * v + g``, ``w <- w - lr * v``.

    With ``freeze_backbone`` only the classifier and its velocity change.
    Parameters and velocities are updated in place.
    """
    if not lr > 0:
        raise InvalidArgumentError(f"learning rate must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise InvalidArgumentError(f"momentum must lie in [0, 1), got {momentum}")
    if velocity is None:
        velocity = model.zeros_like()
    for key, param in model.params.items():
        if freeze_backbone and key != CLASSIFIER:
            continue
        g = grads[key]
        if weight_decay:
            g = g + weight_decay * param
        v = velocity[key]
        v *= momentum
        v += g
        param -= lr * v
    model.version += 1
    return model, velocity
