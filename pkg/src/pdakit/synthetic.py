"""Controlled synthetic tasks: Gaussian class clusters with label shift,
conditional shift, and outlier classes, plus the 2-D linearly-labeled cloud
used by the convexity study."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import FeatureDataset, LabelDistribution, PdakitError, PdaTask, RandomSource


@dataclass(frozen=True)
class GaussianPdaConfig:
    num_classes: int
    num_target_classes: int
    feature_dim: int
    n_source: int
    n_target: int
    class_separation: float
    conditional_shift: float = 0.0
    target_proportions: Optional[LabelDistribution] = None
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.num_target_classes <= self.num_classes):
            raise PdakitError("need 1 <= num_target_classes <= num_classes")
        if self.n_source < self.num_classes:
            raise PdakitError("n_source must cover every class at least once")
        if self.n_target < 1:
            raise PdakitError("n_target must be positive")
        if self.feature_dim < 2:
            raise PdakitError("feature_dim must be at least 2")
        if self.class_separation <= 0:
            raise PdakitError("class_separation must be positive")
        if self.conditional_shift < 0:
            raise PdakitError("conditional_shift must be nonnegative")
        if (
            self.target_proportions is not None
            and self.target_proportions.num_classes != self.num_target_classes
        ):
            raise PdakitError("target_proportions must have num_target_classes entries")


def _grid_means(num_classes: int, dim: int, separation: float, rng: RandomSource) -> np.ndarray:
    """Class means on a randomly rotated planar grid with unit spacing scaled
    by ``separation``; adjacent grid neighbours sit exactly that far apart."""
    side = int(np.ceil(np.sqrt(num_classes)))
    pts = np.zeros((num_classes, dim))
    for j in range(num_classes):
        pts[j, 0] = j % side
        pts[j, 1] = j // side
    gen = rng.generator
    q, _ = np.linalg.qr(gen.normal(size=(dim, dim)))
    return separation * (pts @ q.T)


def _even_allocation(n: int, num_classes: int) -> np.ndarray:
    base, extra = divmod(n, num_classes)
    counts = np.full(num_classes, base, dtype=np.int64)
    counts[:extra] += 1
    return np.repeat(np.arange(num_classes), counts)


def generate_gaussian_pda(cfg: GaussianPdaConfig) -> PdaTask:
    """Source covers all classes with unit isotropic conditionals around grid
    means; the target keeps only the first ``num_target_classes`` classes and
    translates each class conditional by ``conditional_shift`` along a fixed
    seeded direction."""
    rng = RandomSource(cfg.seed)
    K, Kt, d = cfg.num_classes, cfg.num_target_classes, cfg.feature_dim
    means = _grid_means(K, d, cfg.class_separation, rng.spawn(0))

    gen_dir = rng.spawn(1).generator
    directions = gen_dir.normal(size=(K, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    gen_s = rng.spawn(2).generator
    src_labels = _even_allocation(cfg.n_source, K)
    src_feats = means[src_labels] + gen_s.normal(size=(cfg.n_source, d))
    source = FeatureDataset(src_feats, src_labels, K)

    if cfg.target_proportions is None:
        props = np.full(Kt, 1.0 / Kt)
    else:
        props = cfg.target_proportions.probs
    gen_t = rng.spawn(3).generator
    tgt_labels = gen_t.choice(Kt, size=cfg.n_target, p=props)
    shifted_means = means + cfg.conditional_shift * directions
    tgt_feats = shifted_means[tgt_labels] + gen_t.normal(size=(cfg.n_target, d))
    target = FeatureDataset(tgt_feats, tgt_labels, K)

    return PdaTask(source, target, K, shared_classes=frozenset(range(Kt)))


@dataclass(frozen=True)
class ConvexStudyConfig:
    sigma: float
    n: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise PdakitError("sigma must be positive")
        if self.n < 4:
            raise PdakitError("need at least 4 samples")


@dataclass(frozen=True)
class ConvexStudyData:
    """2-D Gaussian cloud with binary labels cut by the stored linear boundary
    w . x + b > 0 (b is zero so the cut passes through the cloud center)."""

    data: FeatureDataset
    w: np.ndarray
    b: float

    def relabel(self, features: np.ndarray) -> np.ndarray:
        return (features @ self.w + self.b > 0).astype(np.int64)


def generate_convex_study(cfg: ConvexStudyConfig) -> ConvexStudyData:
    rng = RandomSource(cfg.seed)
    gen = rng.generator
    w = gen.normal(size=2)
    w /= np.linalg.norm(w)
    feats = cfg.sigma * gen.normal(size=(cfg.n, 2))
    b = 0.0
    labels = (feats @ w + b > 0).astype(np.int64)
    return ConvexStudyData(FeatureDataset(feats, labels, 2), w, b)
