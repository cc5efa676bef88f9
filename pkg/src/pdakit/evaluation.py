"""Diagnostics: error decompositions, the additive error-gap bound between
the sampling and target domains, Lipschitz estimation, a class-conditional
domain-discrepancy probe, and the convex-model risk comparison study.

The bound instantiated by :func:`bound_report` reads

    |eps_t - eps_c| <= ||P_c(Y) - P_t(Y)||_1 * Delta_BE(P_c)
                       + (K - 1) * Delta_CE
                       + 2 * ell * (K - 1) * sqrt(theta (1 - theta)) * C_s

where Delta_BE is the worst per-class error on the sampling domain, Delta_CE
the target-weighted worst cross-domain disagreement of per-class prediction
rates, C_s the largest per-class mean feature norm of the source, and ell a
Lipschitz constant of the model's probabilistic output.  The empirical ell
estimate is a lower bound, so the inequality is only *asserted* when the
caller supplies a certified constant (e.g. a product of operator norms).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .core import LabelDistribution, PdakitError, PdaTask, RandomSource
from .sampling import SamplingDomain
from .synthetic import ConvexStudyConfig, generate_convex_study

Predictor = Callable[[np.ndarray], np.ndarray]


class UndefinedInputError(PdakitError):
    pass


class BoundViolationError(PdakitError):
    pass


def model_error(preds: np.ndarray, labels: np.ndarray) -> float:
    """Misclassification rate (identically 1 - accuracy)."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise UndefinedInputError("preds and labels must be equal-length nonempty vectors")
    return float(np.mean(preds != labels))


def balanced_prediction_error(preds: np.ndarray, labels: np.ndarray, num_classes: int) -> float:
    """Worst per-class error rate over the classes actually present."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise UndefinedInputError("preds and labels must be equal-length nonempty vectors")
    worst = None
    for j in range(num_classes):
        rows = labels == j
        if not rows.any():
            continue
        rate = float(np.mean(preds[rows] != j))
        worst = rate if worst is None else max(worst, rate)
    if worst is None:
        raise UndefinedInputError("no class is represented in the labels")
    return worst


def conditional_error_gap(
    preds_s: np.ndarray,
    labels_s: np.ndarray,
    preds_t: np.ndarray,
    labels_t: np.ndarray,
    p_t: LabelDistribution,
    num_classes: int,
) -> float:
    """Sum over classes of p_t(j) * max_{i != j} |p_s(pred=i | Y=j) -
    p_t(pred=i | Y=j)|; classes with zero target mass contribute nothing."""
    preds_s, labels_s = np.asarray(preds_s), np.asarray(labels_s)
    preds_t, labels_t = np.asarray(preds_t), np.asarray(labels_t)
    total = 0.0
    for j in range(num_classes):
        w = float(p_t.probs[j])
        if w <= 0:
            continue
        rows_s = labels_s == j
        rows_t = labels_t == j
        if not rows_s.any() or not rows_t.any():
            raise UndefinedInputError(f"class {j} has target mass but is missing from a domain")
        gap = 0.0
        for i in range(num_classes):
            if i == j:
                continue
            rate_s = float(np.mean(preds_s[rows_s] == i))
            rate_t = float(np.mean(preds_t[rows_t] == i))
            gap = max(gap, abs(rate_s - rate_t))
        total += w * gap
    return total


def source_norm_constant(source) -> float:
    """Largest per-class mean Euclidean feature norm."""
    labels = source.require_labels()
    norms = np.linalg.norm(source.features, axis=1)
    best = 0.0
    for j in np.unique(labels):
        best = max(best, float(norms[labels == j].mean()))
    return best


def estimate_lipschitz(
    fn: Callable[[np.ndarray], np.ndarray],
    X: np.ndarray,
    num_pairs: int,
    rng: RandomSource,
) -> float:
    """Empirical lower estimate of the Lipschitz constant of ``fn``: the
    largest output/input distance ratio over sampled row pairs and over small
    random perturbations of sampled rows.  Monotone in ``num_pairs`` for a
    fixed seed because pairs are drawn sequentially."""
    X = np.asarray(X, dtype=np.float64)
    if num_pairs < 1:
        raise PdakitError("num_pairs must be at least 1")
    gen = rng.generator
    n, d = X.shape
    best = 0.0
    for _ in range(num_pairs):
        i, k = gen.integers(0, n, size=2)
        direction = gen.normal(size=d)
        direction /= max(np.linalg.norm(direction), 1e-30)
        step = 1e-3 * max(1.0, float(np.linalg.norm(X[i])))
        candidates = [(X[i], X[k]), (X[i], X[i] + step * direction)]
        for x1, x2 in candidates:
            dx = float(np.linalg.norm(x1 - x2))
            if dx == 0.0:
                continue
            out = fn(np.vstack([x1, x2]))
            dy = float(np.linalg.norm(out[0] - out[1]))
            best = max(best, dy / dx)
    return best


@dataclass
class BoundReport:
    eps_c: float
    eps_t: float
    label_l1: float
    delta_be: float
    delta_ce: float
    term_label: float
    term_cond: float
    term_mix: float
    lipschitz_estimate: float
    lipschitz_used: float
    certified: bool
    theta: float
    c_s: float
    rhs_total: float
    gap: float
    slack: float

    def to_dict(self) -> Dict[str, float]:
        d = dict(self.__dict__)
        d["certified"] = bool(self.certified)
        return d


def bound_report(
    predict_fn: Predictor,
    output_fn: Callable[[np.ndarray], np.ndarray],
    task: PdaTask,
    sampling_domain: SamplingDomain,
    theta: float,
    rng: RandomSource,
    num_pairs: int = 200,
    certified_lipschitz: Optional[float] = None,
) -> BoundReport:
    """Evaluate every term of the error-gap bound on a fixed-ratio sampling
    domain.  With a certified constant the inequality is enforced; with the
    empirical estimate it is reported only."""
    if sampling_domain.fixed_theta is None:
        raise PdakitError("the bound is defined for fixed-ratio sampling domains only")
    if abs(sampling_domain.fixed_theta - theta) > 1e-12:
        raise PdakitError(
            f"sampling domain was built with theta={sampling_domain.fixed_theta}, not {theta}"
        )
    if task.target.labels is None:
        raise UndefinedInputError("bound diagnostics require a labeled target")

    K = task.num_classes
    dom = sampling_domain.data
    preds_c = predict_fn(dom.features)
    preds_t = predict_fn(task.target.features)
    preds_s = predict_fn(task.source.features)

    eps_c = model_error(preds_c, dom.labels)
    eps_t = model_error(preds_t, task.target.labels)

    from .core import empirical_label_distribution, l1_distance

    p_c = empirical_label_distribution(dom)
    p_t_emp = empirical_label_distribution(task.target)
    label_l1 = l1_distance(p_c, p_t_emp)
    delta_be = balanced_prediction_error(preds_c, dom.labels, K)
    delta_ce = conditional_error_gap(
        preds_s, task.source.labels, preds_t, task.target.labels, p_t_emp, K
    )
    c_s = source_norm_constant(task.source)
    ell_hat = estimate_lipschitz(
        output_fn, np.vstack([task.source.features, task.target.features]), num_pairs, rng
    )
    certified = certified_lipschitz is not None
    ell = float(certified_lipschitz) if certified else ell_hat

    term_label = label_l1 * delta_be
    term_cond = (K - 1) * delta_ce
    term_mix = 2.0 * ell * (K - 1) * np.sqrt(theta * (1.0 - theta)) * c_s
    rhs_total = term_label + term_cond + term_mix
    gap = abs(eps_t - eps_c)
    slack = rhs_total - gap
    report = BoundReport(
        eps_c=eps_c, eps_t=eps_t, label_l1=label_l1, delta_be=delta_be,
        delta_ce=delta_ce, term_label=term_label, term_cond=term_cond,
        term_mix=float(term_mix), lipschitz_estimate=ell_hat, lipschitz_used=ell,
        certified=certified, theta=float(theta), c_s=c_s,
        rhs_total=float(rhs_total), gap=gap, slack=float(slack),
    )
    if certified and report.slack < 0:
        raise BoundViolationError(
            f"certified bound violated: gap {gap:.6f} > rhs {rhs_total:.6f}"
        )
    return report


# ---------------------------------------------------------------------------
# class-conditional domain discrepancy


@dataclass
class AdistanceReport:
    value: float
    per_class: Dict[int, float] = field(default_factory=dict)
    skipped: List[Tuple[int, str]] = field(default_factory=list)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logistic_probe_error(X_train, y_train, X_test, y_test, steps: int = 200, lr: float = 0.1) -> float:
    """Held-out error of a linear domain discriminator trained by full-batch
    Adam on the logistic loss from a zero start."""
    mean = X_train.mean(axis=0)
    std = np.maximum(X_train.std(axis=0), 1e-12)
    Xtr = (X_train - mean) / std
    Xte = (X_test - mean) / std
    w = np.zeros(Xtr.shape[1])
    b = 0.0
    m_w = np.zeros_like(w)
    v_w = np.zeros_like(w)
    m_b = v_b = 0.0
    for t in range(1, steps + 1):
        p = _sigmoid(Xtr @ w + b)
        err = (p - y_train) / y_train.size
        gw = Xtr.T @ err
        gb = float(err.sum())
        m_w = 0.9 * m_w + 0.1 * gw
        v_w = 0.999 * v_w + 0.001 * gw * gw
        m_b = 0.9 * m_b + 0.1 * gb
        v_b = 0.999 * v_b + 0.001 * gb * gb
        c1, c2 = 1 - 0.9**t, 1 - 0.999**t
        w -= lr * (m_w / c1) / (np.sqrt(v_w / c2) + 1e-8)
        b -= lr * (m_b / c1) / (np.sqrt(v_b / c2) + 1e-8)
    preds = (Xte @ w + b > 0).astype(np.int64)
    return float(np.mean(preds != y_test))


def class_conditional_a_distance(
    features_s: np.ndarray,
    labels_s: np.ndarray,
    features_t: np.ndarray,
    labels_t: np.ndarray,
    shared_classes,
    seed: int = 0,
) -> AdistanceReport:
    """Mean over shared classes of 2 * (1 - 2 * err_d) clamped to [0, 2],
    where err_d is the held-out error of a per-class linear probe separating
    the domains on a 50/50 split.  Classes with fewer than 4 samples in
    either domain are skipped."""
    rng = RandomSource(seed)
    report = AdistanceReport(value=0.0)
    values = []
    for j in sorted(shared_classes):
        xs = np.asarray(features_s)[np.asarray(labels_s) == j]
        xt = np.asarray(features_t)[np.asarray(labels_t) == j]
        if xs.shape[0] < 4 or xt.shape[0] < 4:
            report.skipped.append((j, "fewer than 4 samples in a domain"))
            continue
        gen = rng.spawn(int(j)).generator
        perm_s = gen.permutation(xs.shape[0])
        perm_t = gen.permutation(xt.shape[0])
        hs, ht = xs.shape[0] // 2, xt.shape[0] // 2
        X_train = np.vstack([xs[perm_s[:hs]], xt[perm_t[:ht]]])
        y_train = np.concatenate([np.zeros(hs), np.ones(ht)])
        X_test = np.vstack([xs[perm_s[hs:]], xt[perm_t[ht:]]])
        y_test = np.concatenate([np.zeros(xs.shape[0] - hs), np.ones(xt.shape[0] - ht)])
        err_d = _logistic_probe_error(X_train, y_train, X_test, y_test)
        a_j = float(np.clip(2.0 * (1.0 - 2.0 * err_d), 0.0, 2.0))
        report.per_class[int(j)] = a_j
        values.append(a_j)
    if not values:
        raise UndefinedInputError("no shared class had enough samples for the probe")
    report.value = float(np.mean(values))
    return report


# ---------------------------------------------------------------------------
# convex-model risk comparison


@dataclass
class ConvexityCurves:
    eps_source: np.ndarray
    eps_sampling: np.ndarray


def _mixture_sets(features: np.ndarray, labels: np.ndarray, theta: float):
    """All ordered same-class pairs mixed at the given ratio, one block per
    class, with the class's empirical probability attached.  Exhaustive
    enumeration keeps the sampling-domain error an exact expectation."""
    blocks = []
    n = labels.size
    for j in np.unique(labels):
        rows = features[labels == j]
        m = rows.shape[0]
        mixed = (theta * rows[:, None, :] + (1.0 - theta) * rows[None, :, :]).reshape(-1, rows.shape[1])
        blocks.append((int(j), mixed, m / n))
    return blocks


def convexity_experiment(
    cfg: ConvexStudyConfig,
    theta: float,
    epochs: int,
    model: str = "convex",
    lr: float = 0.05,
) -> ConvexityCurves:
    """Train the scalar model (linear map, rectifier, clamp to [0, 1]) on half
    the 2-D study data by cross-entropy; after every epoch record the error on
    the full source and the exact expected error on the fixed-ratio mixture
    domain.  ``model="linear"`` drops rectifier and clamp (logistic training,
    sign predictions) to exhibit the coinciding curves of the linear case."""
    if not (0.0 < theta < 1.0):
        raise PdakitError("theta must lie strictly between 0 and 1")
    if model not in ("convex", "linear"):
        raise PdakitError(f"unknown model {model!r}")
    study = generate_convex_study(cfg)
    X = study.data.features
    y = study.data.labels.astype(np.float64)

    rng = RandomSource(cfg.seed)
    gen = rng.spawn(1).generator
    train_rows = gen.permutation(cfg.n)[: cfg.n // 2]
    Xtr, ytr = X[train_rows], y[train_rows]

    scale = max(float(np.linalg.norm(Xtr, axis=1).mean()), 1e-12)
    w = rng.spawn(2).generator.normal(size=2) / scale
    b = 0.5 if model == "convex" else 0.0

    blocks = _mixture_sets(X, study.data.labels, theta)

    def predict_labels(feats: np.ndarray) -> np.ndarray:
        u = feats @ w + b
        if model == "convex":
            return (np.clip(u, 0.0, 1.0) >= 0.5).astype(np.int64)
        return (u > 0).astype(np.int64)

    m_w = np.zeros_like(w)
    v_w = np.zeros_like(w)
    m_b = v_b = 0.0
    eps_source = np.empty(epochs)
    eps_sampling = np.empty(epochs)
    ntr = ytr.size
    for epoch in range(epochs):
        u = Xtr @ w + b
        if model == "convex":
            f = np.clip(u, 0.0, 1.0)
            f_safe = np.clip(f, 1e-12, 1.0 - 1e-12)
            df = (-ytr / f_safe + (1.0 - ytr) / (1.0 - f_safe)) / ntr
            du = df * ((u > 0.0) & (u < 1.0))
        else:
            du = (_sigmoid(u) - ytr) / ntr
        gw = Xtr.T @ du
        gb = float(du.sum())
        t = epoch + 1
        m_w = 0.9 * m_w + 0.1 * gw
        v_w = 0.999 * v_w + 0.001 * gw * gw
        m_b = 0.9 * m_b + 0.1 * gb
        v_b = 0.999 * v_b + 0.001 * gb * gb
        c1, c2 = 1 - 0.9**t, 1 - 0.999**t
        w = w - lr * (m_w / c1) / (np.sqrt(v_w / c2) + 1e-8)
        b = b - lr * (m_b / c1) / (np.sqrt(v_b / c2) + 1e-8)

        eps_source[epoch] = model_error(predict_labels(X), study.data.labels)
        err = 0.0
        for j, mixed, weight in blocks:
            err += weight * float(np.mean(predict_labels(mixed) != j))
        eps_sampling[epoch] = err
    return ConvexityCurves(eps_source=eps_source, eps_sampling=eps_sampling)
