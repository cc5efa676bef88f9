"""Timing harness for the scaling iteration: two-column fast path versus the
full-support reference, and compiled versus pure-numpy backends for the fast
path.  Times are wall-clock per iteration over a fixed iteration budget, with
log-log slopes fitted by least squares."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from . import _backend
from .core import RandomSource
from .etic import (
    EticConfig,
    _reference_scale,
    build_workspace,
    etic_per_class,
    sinkhorn_scaling,
    tensor_sinkhorn_reference,
)


@dataclass
class BenchRow:
    size: int
    path: str  # "fast" | "reference" | backend name
    mean_time_per_iter: float
    std_time_per_iter: float
    iterations: int
    repeats: int


def _random_instance(n: int, rng: RandomSource, dim: int = 8):
    gen = rng.generator
    features = gen.normal(size=(n, dim))
    flags = np.zeros(n, dtype=np.int64)
    flags[n // 2 :] = 1
    return features, flags


def _time_fast(ws, cfg: EticConfig, iters: int, repeats: int, backend: Optional[str] = None):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = sinkhorn_scaling(ws.A, ws.B, ws.K1, ws.K2, cfg, backend=backend)
        times.append((time.perf_counter() - t0) / res.iterations)
    return float(np.mean(times)), float(np.std(times))


def _time_reference(ws, flags, cfg: EticConfig, iters: int, repeats: int):
    n = ws.A.shape[0]
    same = flags[:, None] == flags[None, :]
    C2 = np.where(same, 0.0, np.sqrt(2.0))
    K2 = np.maximum(np.exp(-C2 / (cfg.lambda2 * cfg.epsilon)), cfg.kernel_floor)
    A = np.zeros((n, n))
    np.fill_diagonal(A, 1.0 / n)
    B = np.full((n, n), 1.0 / n**2)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _, _, used = _reference_scale(A, B, ws.K1, K2, cfg)
        times.append((time.perf_counter() - t0) / used)
    return float(np.mean(times)), float(np.std(times))


def fit_loglog_slope(sizes, times) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)[0])


def bench_etic(
    sizes: List[int],
    repeats: int = 3,
    iters: int = 10,
    seed: int = 0,
    check_sizes: Optional[List[int]] = None,
) -> Dict:
    """Benchmark fast path against the reference at each size, fit slopes,
    and (for the small check sizes) verify the two paths agree numerically."""
    if sorted(sizes) != list(sizes) or min(sizes) < 4:
        raise ValueError("sizes must be ascending and at least 4")
    cfg = EticConfig(max_iters=iters, tol=0.0)
    rng = RandomSource(seed)
    rows: List[BenchRow] = []
    fast_means, ref_means = [], []
    for idx, n in enumerate(sizes):
        features, flags = _random_instance(n, rng.spawn(idx))
        ws = build_workspace(features, flags, cfg)
        mean_f, std_f = _time_fast(ws, cfg, iters, repeats)
        mean_r, std_r = _time_reference(ws, flags, cfg, iters, repeats)
        rows.append(BenchRow(n, "fast", mean_f, std_f, iters, repeats))
        rows.append(BenchRow(n, "reference", mean_r, std_r, iters, repeats))
        fast_means.append(mean_f)
        ref_means.append(mean_r)
    slopes = {
        "fast": fit_loglog_slope(sizes, fast_means),
        "reference": fit_loglog_slope(sizes, ref_means),
    }
    agreement = []
    if check_sizes:
        tight = replace(cfg, max_iters=2000, tol=1e-12)
        for idx, n in enumerate(check_sizes):
            features, flags = _random_instance(n, rng.spawn(1000 + idx))
            fast_val = etic_per_class(features, flags, tight)
            ref_val = tensor_sinkhorn_reference(features, flags, tight)
            denom = max(abs(fast_val), abs(ref_val), 1e-12)
            agreement.append({"size": n, "fast": fast_val, "reference": ref_val,
                              "rel_diff": abs(fast_val - ref_val) / denom})
    return {"rows": rows, "slopes": slopes, "agreement": agreement}


def bench_backends(sizes: List[int], repeats: int = 3, iters: int = 10, seed: int = 0) -> Dict:
    """Per-iteration wall time of the two-column kernel on each available
    backend.  Rows carry the backend name in ``path``."""
    cfg = EticConfig(max_iters=iters, tol=0.0)
    rng = RandomSource(seed)
    backends = ["python"] + (["compiled"] if _backend.compiled_available() else [])
    rows: List[BenchRow] = []
    means = {b: [] for b in backends}
    for idx, n in enumerate(sizes):
        features, flags = _random_instance(n, rng.spawn(idx))
        ws = build_workspace(features, flags, cfg)
        for b in backends:
            mean_t, std_t = _time_fast(ws, cfg, iters, repeats, backend=b)
            rows.append(BenchRow(n, b, mean_t, std_t, iters, repeats))
            means[b].append(mean_t)
    slopes = {b: fit_loglog_slope(sizes, means[b]) for b in backends}
    return {"rows": rows, "slopes": slopes, "active": _backend.active_backend()}
