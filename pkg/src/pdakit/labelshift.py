"""Label-shift estimation from black-box predictions.

The target/source label ratio vector a is recovered from the source
prediction-label confusion joint M and the target pseudo-label marginal by
the constrained least-squares problem

    min_a || p_t_hat - M a ||^2   s.t.  a >= 0,  a^T p_s = 1.

The change of variables b = a * p_s turns the feasible set into the
probability simplex, where projected gradient descent with an exact
Euclidean projection converges at the usual 1/L rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionMismatchError, LabelDistribution, PdakitError


class InvalidSourceError(PdakitError):
    pass


class DegenerateEstimateError(PdakitError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Joint plug-in estimate M[i, j] = fraction of samples with prediction i
    and true label j (entries sum to 1; column sums give the label marginal)."""

    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise PdakitError(f"confusion matrix must be square, got {M.shape}")
        if np.any(M < 0) or abs(M.sum() - 1.0) > 1e-9:
            raise PdakitError("confusion matrix entries must be nonnegative and sum to 1")
        M = M.copy()
        M.flags.writeable = False
        object.__setattr__(self, "M", M)

    @property
    def num_classes(self) -> int:
        return self.M.shape[0]

    def label_marginal(self) -> np.ndarray:
        return self.M.sum(axis=0)


@dataclass(frozen=True)
class ImportanceWeights:
    """Estimated per-class ratio a = p_t(Y) / p_s(Y) with solver diagnostics."""

    a: np.ndarray
    converged: bool
    iterations: int
    residual: float


def confusion_matrix(preds: np.ndarray, labels: np.ndarray, num_classes: int) -> ConfusionMatrix:
    """Count-based joint of (prediction, label) pairs, normalized by n."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1 or preds.size < 1:
        raise DimensionMismatchError(
            f"preds and labels must be equal-length vectors, got {preds.shape} vs {labels.shape}"
        )
    for name, v in (("preds", preds), ("labels", labels)):
        if v.min() < 0 or v.max() >= num_classes:
            raise PdakitError(f"{name} contain values outside [0, {num_classes})")
    M = np.zeros((num_classes, num_classes))
    np.add.at(M, (preds, labels), 1.0)
    return ConfusionMatrix(M / preds.size)


def pseudo_label_marginal(preds: np.ndarray, num_classes: int) -> LabelDistribution:
    preds = np.asarray(preds, dtype=np.int64)
    if preds.ndim != 1 or preds.size < 1:
        raise PdakitError("preds must be a nonempty vector")
    if preds.min() < 0 or preds.max() >= num_classes:
        raise PdakitError(f"preds contain values outside [0, {num_classes})")
    counts = np.bincount(preds, minlength=num_classes).astype(np.float64)
    return LabelDistribution(counts / counts.sum())


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x : x >= 0, sum x = 1} by the sort-and-
    threshold rule (O(K log K))."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - css) / np.arange(1, v.size + 1) > 0)[0][-1]
    lam = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(v + lam, 0.0)


def bbse_estimate(
    M: ConfusionMatrix,
    p_hat_t: LabelDistribution,
    p_s: LabelDistribution,
    max_iters: int = 5000,
    tol: float = 1e-8,
) -> ImportanceWeights:
    """Solve the constrained least-squares ratio recovery.

    Returns a feasible iterate whether or not the fixed-point residual of the
    projected-gradient map fell below ``tol``; ``converged`` reports which.
    """
    K = M.num_classes
    if p_hat_t.num_classes != K or p_s.num_classes != K:
        raise DimensionMismatchError("confusion matrix and distributions disagree on K")
    ps = p_s.probs
    if np.any(ps <= 0):
        raise InvalidSourceError("source label distribution must be strictly positive")
    if np.abs(M.label_marginal() - ps).max() > 1e-6:
        raise PdakitError("confusion matrix column sums do not match the source marginal")

    pt = p_hat_t.probs
    G = M.M / ps[None, :]  # objective in b = a * p_s: 0.5 ||G b - pt||^2
    L = float(np.linalg.norm(G, 2)) ** 2
    step = 1.0 / max(L, 1e-30)

    b = ps.copy()  # start from a = 1 (no shift)
    residual = np.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad = G.T @ (G @ b - pt)
        b_next = project_simplex(b - step * grad)
        residual = float(np.abs(b_next - b).max())
        b = b_next
        if residual <= tol:
            converged = True
            break
    return ImportanceWeights(a=b / ps, converged=converged, iterations=it, residual=residual)


def target_label_distribution(
    p_s: LabelDistribution,
    weights: ImportanceWeights,
    floor_threshold: float = 1e-4,
) -> LabelDistribution:
    """Recompose p_t = p_s * a, zeroing entries below ``floor_threshold``
    before renormalizing so that near-extinct classes are eliminated exactly."""
    a = np.asarray(weights.a, dtype=np.float64)
    if a.shape != p_s.probs.shape:
        raise DimensionMismatchError("weights and source distribution disagree on K")
    p = p_s.probs * a
    p[p < floor_threshold] = 0.0
    total = p.sum()
    if total <= 0:
        raise DegenerateEstimateError("all estimated target mass fell below the floor")
    return LabelDistribution(p / total)
