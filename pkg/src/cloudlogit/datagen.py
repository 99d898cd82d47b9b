"""Long-tailed class profiles, synthetic data, and the CSV dataset format.

CSV layout: one header line ``label,x0,...,x{D-1}``, then one row per sample
with an integer label followed by D float features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, InvalidArgumentError, ParseError, SchemaError
from .numerics import Rng, l2_normalize


@dataclass(frozen=True)
class ClassProfile:
    """Per-class training counts, stored in class-index order."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise InvalidArgumentError("profile needs at least one class")
        if min(counts) < 1:
            raise InvalidArgumentError(f"every class needs at least one sample, got {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def n_max(self) -> int:
        return max(self.counts)

    @property
    def n_min(self) -> int:
        return min(self.counts)

    @property
    def ratio(self) -> float:
        return self.n_max / self.n_min

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)

    def to_text(self) -> str:
        lines = [
            f"classes={self.num_classes}",
            f"total={self.total}",
            f"n_max={self.n_max}",
            f"n_min={self.n_min}",
            f"imbalance_ratio={self.ratio:.6g}",
            "counts=" + ",".join(str(c) for c in self.counts),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_labels(cls, labels, num_classes=None) -> ClassProfile:
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        return cls(tuple(np.bincount(labels, minlength=num_classes)))


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    profile: ClassProfile
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise SchemaError(f"inputs {self.inputs.shape} do not match {len(self.labels)} labels")
        if len(self.labels) == 0:
            # an empty split keeps its profile only as the class list
            self.inputs = self.inputs.reshape(0, self.inputs.shape[1])
            return
        hist = np.bincount(self.labels, minlength=self.profile.num_classes)
        if len(hist) != self.profile.num_classes or tuple(hist) != self.profile.counts:
            raise SchemaError("label histogram does not match the class profile")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return self.profile.num_classes

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def exponential_profile(n_max: int, r: float, num_classes: int) -> ClassProfile:
    """Counts ``n_i = n_max * lam**i`` with ``lam = r**(-1/(C-1))``.

    Fractional counts round half up; the first and last class are pinned to
    ``n_max`` and ``round(n_max / r)``.
    """
    if num_classes < 2:
        raise InvalidArgumentError("need at least two classes")
    if r < 1:
        raise InvalidArgumentError(f"imbalance ratio must be >= 1, got {r}")
    if n_max < r:
        raise InvalidArgumentError(f"n_max={n_max} < r={r}: the tail class would round to zero")
    lam = r ** (-1.0 / (num_classes - 1))
    counts = _round_half_up(n_max * lam ** np.arange(num_classes))
    counts[0] = n_max
    counts[-1] = int(_round_half_up(n_max / r))
    return ClassProfile(tuple(counts))


def class_anchors(num_classes: int, dim: int, rng: Rng) -> np.ndarray:
    """Unit-norm class centres, one per row.

    When ``C <= D + 1`` the anchors are the vertices of a regular simplex under
    a random rotation, so each anchor is uniform on the sphere while pairwise
    separation is maximal. Otherwise they are independent uniform draws.
    """
    if num_classes <= dim + 1:
        simplex = np.eye(num_classes) - 1.0 / num_classes
        if num_classes == 1:
            simplex = np.ones((1, 1))
        simplex = l2_normalize(simplex)
        q, r = np.linalg.qr(rng.normal((dim, dim)))
        q = q * np.sign(np.diag(r))
        basis = q[:, :num_classes].T
        return l2_normalize(simplex @ basis)
    return l2_normalize(rng.normal((num_classes, dim)))


def _sample_split(anchors, counts, class_spread, rng, split):
    labels = np.repeat(np.arange(len(counts)), counts)
    noise = rng.normal((len(labels), anchors.shape[1]))
    inputs = anchors[labels] + class_spread * noise
    return Dataset(inputs, labels, ClassProfile(tuple(counts)), split)


def generate_synthetic(profile: ClassProfile, dim: int, class_spread: float, rng: Rng,
                       test_per_class: int = 100):
    """Gaussian clusters around unit anchors: long-tailed train, balanced test.

    Draw order on ``rng``: anchors, train noise, test noise.
    """
    if dim < 2:
        raise InvalidArgumentError("dimension must be at least 2")
    if not class_spread > 0:
        raise InvalidArgumentError("class_spread must be positive")
    if test_per_class < 1:
        raise InvalidArgumentError("test_per_class must be positive")
    anchors = class_anchors(profile.num_classes, dim, rng)
    train = _sample_split(anchors, profile.counts, class_spread, rng, "train")
    test = _sample_split(anchors, (test_per_class,) * profile.num_classes, class_spread, rng, "test")
    return train, test


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x{i}" for i in range(dataset.input_dim)])
        for y, row in zip(dataset.labels, dataset.inputs):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])
    tmp.replace(path)


def load_dataset(path, num_classes=None, split="train") -> Dataset:
    """Read a dataset CSV; the profile is inferred from the label column."""
    labels, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not header or header[0].strip() != "label":
            raise ParseError("missing header line starting with 'label'", line=1)
        width = len(header) - 1
        if width < 1:
            raise SchemaError("header declares no feature columns")
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != width + 1:
                raise ParseError(f"expected {width + 1} fields, got {len(record)}", line=lineno)
            try:
                label = int(record[0])
            except ValueError:
                raise ParseError(f"label {record[0]!r} is not an integer", line=lineno) from None
            try:
                values = [float(v) for v in record[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature ({exc})", line=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature", line=lineno)
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise SchemaError(f"line {lineno}: label {label} out of range")
            labels.append(label)
            rows.append(values)
    if not labels:
        raise EmptyDatasetError(f"{path}: no samples")
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes or 0)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise SchemaError(f"classes {missing} have no samples")
    return Dataset(np.asarray(rows), labels, ClassProfile(tuple(counts)), split)
