"""Seeded random streams and small dense helpers.

All arithmetic is float64. The generator is numpy's PCG64 seeded directly
with the 64-bit seed; uniforms are its 53-bit doubles in ``[0, 1)``.
Gaussians come from the Box-Muller transform applied to consecutive uniform
pairs ``(u1, u2)``: ``r = sqrt(-2 log(1 - u1))``, emitting ``r cos(2 pi u2)``
then ``r sin(2 pi u2)``. A request for ``n`` normals always consumes
``2 * ceil(n / 2)`` uniforms, so the stream position depends only on the
sequence of request sizes.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

_U64 = 2**64


class Rng:
    """Single-owner random stream over PCG64."""

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < _U64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._bitgen = np.random.PCG64(seed)
        self._gen = np.random.Generator(self._bitgen)

    def __repr__(self):
        return f"Rng(seed={self.seed})"

    def spawn(self, key: int) -> Rng:
        """Independent stream derived from ``(seed, key)``; does not advance self."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = math.prod(shape)
        pairs = (n + 1) // 2
        u = self._gen.random(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.reshape(-1)[:n].reshape(shape)

    def get_state(self) -> dict:
        return {"seed": self.seed, "bit_generator": self._bitgen.state}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._bitgen.state = state["bit_generator"]

    @classmethod
    def from_state(cls, state: dict) -> Rng:
        rng = cls(int(state["seed"]))
        rng.set_state(state)
        return rng


def sample_clamped_gaussian(rng: Rng, mu: float, sigma: float, lo: float, hi: float, n) -> np.ndarray:
    """Draw ``n`` values from N(mu, sigma^2) and clamp them into ``[lo, hi]``.

    ``sigma`` is a standard deviation. ``n`` may be an int or a shape tuple.
    """
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    if not lo < hi:
        raise InvalidArgumentError(f"empty clamp range [{lo}, {hi}]")
    shape = (n,) if np.isscalar(n) else tuple(n)
    if math.prod(shape) < 1:
        raise InvalidArgumentError("need at least one draw")
    x = rng.normal(shape)
    x *= sigma
    x += mu
    np.minimum(x, hi, out=x)
    np.maximum(x, lo, out=x)
    return x


def l2_normalize(v, axis: int = -1) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise DegenerateInputError("cannot normalize a zero or non-finite vector")
    return v / norm


def as_matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or 0 in a.shape:
        raise InvalidArgumentError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    return a
