"""Two-layer feature transform plus softmax classifier head, with hand-rolled
reverse-mode gradients and Adam.  The transform's second layer is linear; its
output is the feature representation consumed by the alignment criterion, and
alignment gradients enter through it without touching the classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .core import PdakitError, RandomSource

LOG_FLOOR = 1e-12


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def tensors(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2,
                "W3": self.W3, "b3": self.b3}

    def copy(self) -> "MlpParams":
        return MlpParams(**{k: v.copy() for k, v in self.tensors().items()})

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W3.shape[1]


@dataclass
class MlpGrads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def tensors(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2,
                "W3": self.W3, "b3": self.b3}

    def add(self, other: "MlpGrads", scale: float = 1.0) -> "MlpGrads":
        mine, theirs = self.tensors(), other.tensors()
        return MlpGrads(**{k: mine[k] + scale * theirs[k] for k in mine})


def zero_grads(params: MlpParams) -> MlpGrads:
    return MlpGrads(**{k: np.zeros_like(v) for k, v in params.tensors().items()})


def init_model(d: int, h1: int, h2: int, num_classes: int, rng: RandomSource) -> MlpParams:
    """Zero-mean uniform weights scaled by 1/sqrt(fan_in); zero biases."""
    if min(d, h1, h2, num_classes) < 1:
        raise PdakitError("all layer dimensions must be positive")
    gen = rng.generator

    def layer(fan_in, fan_out):
        s = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-s, s, size=(fan_in, fan_out))

    return MlpParams(
        W1=layer(d, h1), b1=np.zeros(h1),
        W2=layer(h1, h2), b2=np.zeros(h2),
        W3=layer(h2, num_classes), b3=np.zeros(num_classes),
    )


@dataclass
class ForwardCache:
    X: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    features: np.ndarray
    probs: np.ndarray


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: MlpParams, X: np.ndarray):
    """Returns (features, probs, cache); features are the transform output,
    probs the row-stochastic classifier output."""
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise PdakitError("non-finite inputs")
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise PdakitError(f"expected input with {params.input_dim} columns, got {X.shape}")
    z1 = X @ params.W1 + params.b1
    a1 = np.maximum(z1, 0.0)
    features = a1 @ params.W2 + params.b2
    probs = _softmax(features @ params.W3 + params.b3)
    return features, probs, ForwardCache(X, z1, a1, features, probs)


def cross_entropy_risk(probs: np.ndarray, labels: np.ndarray,
                       sample_weights: Optional[np.ndarray] = None) -> float:
    """Mean negative log-likelihood.  ``labels`` may be an int vector or a
    row-stochastic matrix of soft targets; the log is floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    logp = np.log(np.maximum(probs, LOG_FLOOR))
    labels = np.asarray(labels)
    if labels.ndim == 1:
        per_sample = -logp[np.arange(n), labels.astype(np.int64)]
    else:
        per_sample = -(labels * logp).sum(axis=1)
    if sample_weights is not None:
        per_sample = per_sample * sample_weights
    return float(per_sample.mean())


def risk_logit_gradient(probs: np.ndarray, labels: np.ndarray,
                        sample_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the logits:
    (probs - targets) / n, optionally weighted per sample."""
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    labels = np.asarray(labels)
    if labels.ndim == 1:
        targets = np.zeros_like(probs)
        targets[np.arange(n), labels.astype(np.int64)] = 1.0
    else:
        targets = labels.astype(np.float64)
    d = (probs - targets) / n
    if sample_weights is not None:
        d = d * np.asarray(sample_weights, dtype=np.float64)[:, None]
    return d


def backward(params: MlpParams, cache: ForwardCache, dlogits: np.ndarray,
             feature_grad: Optional[np.ndarray] = None, mu: float = 0.0) -> MlpGrads:
    """Exact reverse pass.  ``dlogits`` drives the classification path;
    ``mu * feature_grad`` is injected at the transform output, so it reaches
    the transform weights only."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.probs.shape:
        raise PdakitError("dlogits shape does not match the cached forward pass")
    dW3 = cache.features.T @ dlogits
    db3 = dlogits.sum(axis=0)
    dfeat = dlogits @ params.W3.T
    if feature_grad is not None and mu != 0.0:
        dfeat = dfeat + mu * feature_grad
    dW2 = cache.a1.T @ dfeat
    db2 = dfeat.sum(axis=0)
    da1 = dfeat @ params.W2.T
    dz1 = da1 * (cache.z1 > 0)
    dW1 = cache.X.T @ dz1
    db1 = dz1.sum(axis=0)
    return MlpGrads(dW1, db1, dW2, db2, dW3, db3)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: MlpParams, lr: float = 1e-3) -> AdamState:
    zeros = {k: np.zeros_like(t) for k, t in params.tensors().items()}
    return AdamState(m=zeros, v={k: z.copy() for k, z in zeros.items()}, lr=lr)


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState) -> None:
    """Standard bias-corrected update, in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.tensors().items():
        g = grads.tensors()[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def predict(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest class index."""
    _, probs, _ = forward(params, X)
    return np.argmax(probs, axis=1)


def output_probs(params: MlpParams, X: np.ndarray) -> np.ndarray:
    _, probs, _ = forward(params, X)
    return probs


def operator_norm(W: np.ndarray) -> float:
    return float(np.linalg.norm(W, 2))


def certified_lipschitz(params: MlpParams) -> float:
    """Product of layer operator norms; the rectifier and softmax are both
    1-Lipschitz, so this upper-bounds the full model's constant."""
    return operator_norm(params.W1) * operator_norm(params.W2) * operator_norm(params.W3)
