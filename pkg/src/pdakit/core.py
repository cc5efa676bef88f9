"""Shared data model: feature datasets, label distributions, adaptation tasks,
and the seeded random source used by every stochastic operation.

Class labels are dense integers in [0, K).  Datasets are immutable after
construction; operations that derive new data return new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9


class PdakitError(Exception):
    """Base class for all errors raised by this package."""


class LabelsRequiredError(PdakitError):
    pass


class DimensionMismatchError(PdakitError):
    pass


class TaskValidationError(PdakitError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("task validation failed: " + "; ".join(self.violations))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FeatureDataset:
    """An n x d matrix of feature rows with optional integer class labels."""

    features: np.ndarray
    labels: Optional[np.ndarray]
    num_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise PdakitError(f"features must be a nonempty 2-D matrix, got shape {feats.shape}")
        if self.num_classes < 1:
            raise PdakitError(f"num_classes must be positive, got {self.num_classes}")
        object.__setattr__(self, "features", _readonly(feats))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise PdakitError(
                    f"labels shape {labels.shape} does not match {feats.shape[0]} rows"
                )
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise PdakitError(
                    f"labels must lie in [0, {self.num_classes}), "
                    f"got range [{labels.min()}, {labels.max()}]"
                )
            object.__setattr__(self, "labels", _readonly(labels))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise LabelsRequiredError("operation requires a labeled dataset")
        return self.labels


@dataclass(frozen=True)
class LabelDistribution:
    """A length-K probability vector over class indices."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise PdakitError(f"probability vector must be 1-D, got shape {p.shape}")
        if np.any(p < 0):
            raise PdakitError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise PdakitError(f"probabilities must sum to 1, got {p.sum()!r}")
        object.__setattr__(self, "probs", _readonly(p))

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    def support(self) -> np.ndarray:
        """Indices of classes with strictly positive mass."""
        return np.flatnonzero(self.probs > 0)


@dataclass(frozen=True)
class PdaTask:
    """A labeled source dataset plus a target dataset whose label support may
    be a strict subset of the source's.  Target labels, when present, are used
    for evaluation only and never seen by training."""

    source: FeatureDataset
    target: FeatureDataset
    num_classes: int
    shared_classes: Optional[frozenset] = None

    def __post_init__(self):
        if self.shared_classes is not None:
            object.__setattr__(self, "shared_classes", frozenset(self.shared_classes))


@dataclass
class RandomSource:
    """Deterministic random stream backed by the Philox 4x64 counter-based
    generator.  Identical seed and call sequence give identical draws; use
    :meth:`spawn` to derive independent child streams for parallel work.
    """

    seed: int
    _path: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._path)
        self._generator = np.random.Generator(np.random.Philox(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def spawn(self, key: int) -> "RandomSource":
        """Independent stream addressed by (seed, path + (key,))."""
        return RandomSource(self.seed, self._path + (key,))


def empirical_label_distribution(dataset: FeatureDataset) -> LabelDistribution:
    """Plug-in class proportions: probs[j] = #{labels == j} / n."""
    labels = dataset.require_labels()
    counts = np.bincount(labels, minlength=dataset.num_classes).astype(np.float64)
    return LabelDistribution(counts / counts.sum())


def l1_distance(p: LabelDistribution, q: LabelDistribution) -> float:
    """Sum of absolute probability differences, in [0, 2].

    This is the plain l1 norm between the vectors (twice the total-variation
    distance); callers that need TV must halve it themselves.
    """
    if p.num_classes != q.num_classes:
        raise DimensionMismatchError(
            f"distributions have different lengths: {p.num_classes} vs {q.num_classes}"
        )
    return float(np.abs(p.probs - q.probs).sum())


def validate_task(task: PdaTask) -> list:
    """Check every task invariant; returns a list of human-readable violations
    (empty when the task is well formed)."""
    violations = []
    if task.source.labels is None:
        violations.append("source labels missing")
    else:
        present = np.unique(task.source.labels)
        for j in range(task.num_classes):
            if j not in present:
                violations.append(f"source lacks class {j}")
    if task.source.num_classes != task.num_classes:
        violations.append(
            f"source num_classes {task.source.num_classes} != task num_classes {task.num_classes}"
        )
    if task.target.num_classes != task.num_classes:
        violations.append(
            f"target num_classes {task.target.num_classes} != task num_classes {task.num_classes}"
        )
    if task.source.dim != task.target.dim:
        violations.append(
            f"feature dim mismatch: source d={task.source.dim}, target d={task.target.dim}"
        )
    if task.shared_classes is not None:
        if not task.shared_classes:
            violations.append("shared_classes is empty")
        for j in sorted(task.shared_classes):
            if not (0 <= j < task.num_classes):
                violations.append(f"shared class {j} outside [0, {task.num_classes})")
    return violations


def require_valid_task(task: PdaTask) -> None:
    violations = validate_task(task)
    if violations:
        raise TaskValidationError(violations)
