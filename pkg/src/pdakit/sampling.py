"""Construction of the labeled sampling domain: within-class convex
combinations of source pairs, drawn with class frequencies matching an
estimated target label distribution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import FeatureDataset, LabelDistribution, PdakitError, RandomSource


class UnsatisfiableClassError(PdakitError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    """``fixed_theta=None`` redraws the mix ratio per generated point from
    Beta(alpha, alpha); otherwise the constant is used.  ``n_c=None`` defaults
    to twice the source size at build time."""

    alpha: float = 0.2
    n_c: Optional[int] = None
    fixed_theta: Optional[float] = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise PdakitError("alpha must be positive")
        if self.n_c is not None and self.n_c < 1:
            raise PdakitError("n_c must be positive")
        if self.fixed_theta is not None and not (0.0 <= self.fixed_theta <= 1.0):
            raise PdakitError("fixed theta must lie in [0, 1]")


@dataclass(frozen=True)
class SamplingDomain:
    """The generated dataset plus, for each row, the two source row indices it
    mixes and the mix ratio used; kept so the segment property is checkable."""

    data: FeatureDataset
    pair_left: np.ndarray
    pair_right: np.ndarray
    thetas: np.ndarray
    fixed_theta: Optional[float]


def draw_mix_ratio(cfg: SamplingConfig, rng: RandomSource) -> float:
    if cfg.fixed_theta is not None:
        return cfg.fixed_theta
    return float(rng.generator.beta(cfg.alpha, cfg.alpha))


def _draw_mix_ratios(cfg: SamplingConfig, rng: RandomSource, size: int) -> np.ndarray:
    if cfg.fixed_theta is not None:
        return np.full(size, cfg.fixed_theta)
    return rng.generator.beta(cfg.alpha, cfg.alpha, size=size)


def build_sampling_domain(
    source: FeatureDataset,
    p_t: LabelDistribution,
    cfg: SamplingConfig,
    rng: RandomSource,
) -> SamplingDomain:
    """Draw labeled points x = theta * x_k + (1 - theta) * x_l with x_k, x_l
    picked uniformly (with replacement) from the same source class, class
    frequencies following ``p_t``.  Classes with zero mass never appear.
    """
    labels_src = source.require_labels()
    if p_t.num_classes != source.num_classes:
        raise PdakitError("label distribution does not match source class count")
    n_c = cfg.n_c if cfg.n_c is not None else 2 * source.n

    support = p_t.support()
    rows_by_class = {}
    for j in support:
        rows = np.flatnonzero(labels_src == j)
        if rows.size == 0:
            raise UnsatisfiableClassError(
                f"class {j} has target mass {p_t.probs[j]:.4g} but no source samples"
            )
        rows_by_class[int(j)] = rows

    gen = rng.generator
    mass = p_t.probs[support]
    labels = support[gen.choice(support.size, size=n_c, p=mass / mass.sum())]
    thetas = _draw_mix_ratios(cfg, rng, n_c)

    left = np.empty(n_c, dtype=np.int64)
    right = np.empty(n_c, dtype=np.int64)
    for j in support:  # ascending class order keeps the draw sequence fixed
        at = np.flatnonzero(labels == j)
        if at.size == 0:
            continue
        rows = rows_by_class[int(j)]
        picks = gen.integers(0, rows.size, size=(at.size, 2))
        left[at] = rows[picks[:, 0]]
        right[at] = rows[picks[:, 1]]

    feats = thetas[:, None] * source.features[left] + (1.0 - thetas)[:, None] * source.features[right]
    data = FeatureDataset(feats, labels, source.num_classes)
    return SamplingDomain(data, left, right, thetas, cfg.fixed_theta)
