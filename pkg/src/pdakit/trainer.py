"""Training loop: per epoch, pseudo-label the target, re-estimate the target
label distribution, rebuild the sampling domain, and take one optimizer step
on risk + mu * alignment.  Ablation variants swap out individual pieces.

Variants
--------
is2c           sampling-domain risk + transport-based alignment (full method)
source_only    plain source risk, no adaptation
sampling_only  sampling-domain risk, mu forced to 0
etic_only      plain source risk + alignment
werm_etic      importance-weighted source risk + alignment
mixup_etic     cross-domain mixup risk (soft labels, no shift correction)
               + alignment
is2c_hsic      full method with the kernel-based HSIC criterion instead
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .core import (
    FeatureDataset,
    LabelDistribution,
    PdakitError,
    PdaTask,
    RandomSource,
    empirical_label_distribution,
    require_valid_task,
)
from .etic import SOURCE, TARGET, EticConfig, compute_alignment
from .labelshift import (
    DegenerateEstimateError,
    bbse_estimate,
    confusion_matrix,
    pseudo_label_marginal,
    target_label_distribution,
)
from .model import (
    MlpParams,
    adam_step,
    backward,
    cross_entropy_risk,
    forward,
    init_adam,
    init_model,
    predict,
    risk_logit_gradient,
)
from .sampling import SamplingConfig, build_sampling_domain

VARIANTS = (
    "is2c",
    "source_only",
    "sampling_only",
    "etic_only",
    "werm_etic",
    "mixup_etic",
    "is2c_hsic",
)


@dataclass(frozen=True)
class TrainConfig:
    mu: float = 1.0
    epochs: int = 50
    warmup_epochs: int = 100
    lr: float = 1e-3
    hidden1: int = 256
    hidden2: int = 256
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    etic: EticConfig = field(default_factory=EticConfig)
    batch_size: Optional[int] = None  # None = full batch
    variant: str = "is2c"
    seed: int = 0

    def __post_init__(self):
        if self.mu < 0:
            raise PdakitError("mu must be nonnegative")
        if self.epochs < 1:
            raise PdakitError("epochs must be at least 1")
        if self.warmup_epochs < 0:
            raise PdakitError("warmup_epochs must be nonnegative")
        if self.variant not in VARIANTS:
            raise PdakitError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.batch_size is not None and self.batch_size < 2:
            raise PdakitError("batch_size must be at least 2")


@dataclass
class EpochRecord:
    epoch: int
    risk: float
    align: float
    total: float
    p_t: np.ndarray
    skipped_classes: List[int]
    bbse_fallback: bool
    target_accuracy: Optional[float]
    wall_time: float


@dataclass
class TrainReport:
    variant: str
    records: List[EpochRecord] = field(default_factory=list)
    snapshot_path: Optional[str] = None

    @property
    def final_target_accuracy(self) -> Optional[float]:
        return self.records[-1].target_accuracy if self.records else None

    @property
    def final_p_t(self) -> Optional[np.ndarray]:
        return self.records[-1].p_t if self.records else None


def warm_start(params: MlpParams, source: FeatureDataset, warmup_epochs: int, lr: float) -> MlpParams:
    """Full-batch cross-entropy fine-tuning on the source; returns new params."""
    params = params.copy()
    labels = source.require_labels()
    state = init_adam(params, lr)
    for _ in range(warmup_epochs):
        _, probs, cache = forward(params, source.features)
        dlogits = risk_logit_gradient(probs, labels)
        adam_step(params, backward(params, cache, dlogits), state)
    return params


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _subsample(gen: np.random.Generator, n: int, size: Optional[int]) -> np.ndarray:
    if size is None or size >= n:
        return np.arange(n)
    return np.sort(gen.choice(n, size=size, replace=False))


def _mixup_batch(task: PdaTask, pseudo: np.ndarray, cfg: TrainConfig, gen: np.random.Generator):
    """Cross-domain mixup: uniform source/target pairs, convex one-hot labels,
    class frequencies left uncorrected."""
    n_mix = cfg.sampling.n_c if cfg.sampling.n_c is not None else 2 * task.source.n
    ks = gen.integers(0, task.source.n, size=n_mix)
    lt = gen.integers(0, task.target.n, size=n_mix)
    if cfg.sampling.fixed_theta is not None:
        theta = np.full(n_mix, cfg.sampling.fixed_theta)
    else:
        theta = gen.beta(cfg.sampling.alpha, cfg.sampling.alpha, size=n_mix)
    X = theta[:, None] * task.source.features[ks] + (1 - theta)[:, None] * task.target.features[lt]
    K = task.num_classes
    soft = theta[:, None] * _one_hot(task.source.require_labels()[ks], K)
    soft += (1 - theta)[:, None] * _one_hot(pseudo[lt], K)
    return X, soft


def train(task: PdaTask, cfg: TrainConfig) -> tuple:
    """Run ``cfg.variant`` for ``cfg.epochs`` epochs after warm start; returns
    (params, report).  Target labels, when present, feed only the report."""
    require_valid_task(task)
    rng = RandomSource(cfg.seed)
    K = task.num_classes
    Xs, ys = task.source.features, task.source.require_labels()
    Xt = task.target.features
    flags_st = np.concatenate([np.full(task.source.n, SOURCE), np.full(task.target.n, TARGET)])
    X_st = np.vstack([Xs, Xt])

    params = init_model(task.source.dim, cfg.hidden1, cfg.hidden2, K, rng.spawn(0))
    params = warm_start(params, task.source, cfg.warmup_epochs, cfg.lr)
    state = init_adam(params, cfg.lr)

    sample_rng = rng.spawn(1)
    batch_gen = rng.spawn(2).generator
    p_s = empirical_label_distribution(task.source)
    fallback_p_t = p_s
    align_criterion = "hsic" if cfg.variant == "is2c_hsic" else "etic"
    mu_eff = 0.0 if cfg.variant in ("source_only", "sampling_only") else cfg.mu

    report = TrainReport(variant=cfg.variant)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        skipped: List[int] = []
        bbse_fallback = False

        if cfg.variant == "source_only":
            p_t = p_s
            weights = None
            X_risk, y_risk, risk_weights = Xs, ys, None
        else:
            src_preds = predict(params, Xs)
            tgt_preds = predict(params, Xt)
            M = confusion_matrix(src_preds, ys, K)
            p_hat_t = pseudo_label_marginal(tgt_preds, K)
            weights = bbse_estimate(M, p_hat_t, p_s)
            try:
                p_t = target_label_distribution(p_s, weights)
            except DegenerateEstimateError:
                p_t = fallback_p_t
                bbse_fallback = True
            fallback_p_t = p_t

            if cfg.variant in ("is2c", "sampling_only", "is2c_hsic"):
                domain = build_sampling_domain(task.source, p_t, cfg.sampling, sample_rng)
                X_risk, y_risk, risk_weights = domain.data.features, domain.data.labels, None
            elif cfg.variant == "etic_only":
                X_risk, y_risk, risk_weights = Xs, ys, None
            elif cfg.variant == "werm_etic":
                X_risk, y_risk, risk_weights = Xs, ys, weights.a[ys]
            else:  # mixup_etic
                X_risk, y_risk = _mixup_batch(task, tgt_preds, cfg, batch_gen)
                risk_weights = None

        rows = _subsample(batch_gen, X_risk.shape[0], cfg.batch_size)
        Xb = X_risk[rows]
        yb = y_risk[rows]
        wb = risk_weights[rows] if risk_weights is not None else None
        _, probs, cache = forward(params, Xb)
        risk = cross_entropy_risk(probs, yb, sample_weights=wb)
        dlogits = risk_logit_gradient(probs, yb, sample_weights=wb)
        grads = backward(params, cache, dlogits)

        align_val = 0.0
        if mu_eff > 0:
            if cfg.batch_size is None:
                st_rows = np.arange(X_st.shape[0])
            else:
                half = max(cfg.batch_size // 2, 1)
                src_rows = _subsample(batch_gen, task.source.n, half)
                tgt_rows = _subsample(batch_gen, task.target.n, half)
                st_rows = np.concatenate([src_rows, task.source.n + tgt_rows])
            labels_st = np.concatenate([ys, tgt_preds])
            feats_st, _, cache_st = forward(params, X_st[st_rows])
            breakdown = compute_alignment(
                feats_st,
                labels_st[st_rows],
                flags_st[st_rows],
                p_t,
                cfg.etic,
                with_gradient=True,
                criterion=align_criterion,
                on_numerical_error="skip",
            )
            align_val = breakdown.value
            skipped = sorted({j for j, _ in breakdown.skipped})
            grads = grads.add(
                backward(params, cache_st, np.zeros_like(cache_st.probs),
                         feature_grad=breakdown.gradient, mu=mu_eff)
            )

        adam_step(params, grads, state)

        accuracy = None
        if task.target.labels is not None:
            accuracy = float(np.mean(predict(params, Xt) == task.target.labels))
        report.records.append(
            EpochRecord(
                epoch=epoch,
                risk=risk,
                align=align_val,
                total=risk + mu_eff * align_val,
                p_t=np.array(p_t.probs),
                skipped_classes=skipped,
                bbse_fallback=bbse_fallback,
                target_accuracy=accuracy,
                wall_time=time.perf_counter() - t0,
            )
        )
    return params, report


def train_is2c(task: PdaTask, cfg: TrainConfig) -> tuple:
    return train(task, replace(cfg, variant="is2c"))


def train_baseline(task: PdaTask, cfg: TrainConfig) -> tuple:
    if cfg.variant == "is2c":
        raise PdakitError("train_baseline expects a non-default variant")
    return train(task, cfg)
