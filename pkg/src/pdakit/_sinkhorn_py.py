"""Pure-numpy fixed-point kernels for the two-column scaling iteration.

This is the fallback backend and the instrumented one: when an
:class:`OpCounter` is supplied, every multiply inside the update equations is
accounted for with the textbook p*q*r matrix-product convention, which is how
the per-iteration cost of the two-column path comes out to 4n^2 + 12n.
"""

from __future__ import annotations

import numpy as np


class SinkhornNumericalError(Exception):
    """Scaling iteration produced a non-finite entry (kernel underflow)."""

    def __init__(self, message: str, context: str = ""):
        self.context = context
        super().__init__(message)


class OpCounter:
    """Tallies floating-point multiplies of the counted primitives."""

    def __init__(self):
        self.flops = 0

    def matmul(self, p: int, q: int, r: int) -> None:
        self.flops += p * q * r

    def elementwise(self, count: int) -> None:
        self.flops += count


def scale_columns(A, B, K1, K2, max_iters, tol, counter=None):
    """Alternate U <- A / (K1 V K2^T), V <- B / (K1 U K2^T) from all-ones
    starts until the max-abs change of U drops to ``tol`` and the fixed-point
    residual ||A - U * (K1 V K2^T)||_inf is within 10 * tol, or ``max_iters``
    passes elapse.  Returns (U, V, iterations, converged).

    The residual verification runs only at candidate convergence and is not
    part of the per-iteration operation count.
    """
    n = A.shape[0]
    m = A.shape[1]
    U = np.ones_like(A)
    V = np.ones_like(B)
    K2T = np.ascontiguousarray(K2.T)
    it = 0
    converged = False
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while it < max_iters:
            it += 1
            D = K1 @ V @ K2T
            U_new = A / D
            if counter is not None:
                counter.matmul(n, n, m)
                counter.matmul(n, m, m)
                counter.elementwise(n * m)
            delta = float(np.abs(U_new - U).max())
            U = U_new
            E = K1 @ U @ K2T
            V = B / E
            if counter is not None:
                counter.matmul(n, n, m)
                counter.matmul(n, m, m)
                counter.elementwise(n * m)
            if not (np.isfinite(U).all() and np.isfinite(V).all()):
                raise SinkhornNumericalError(
                    f"non-finite scaling entries at iteration {it} (n={n})"
                )
            if delta <= tol:
                residual = float(np.abs(A - U * (K1 @ V @ K2T)).max())
                if residual <= 10.0 * tol:
                    converged = True
                    break
    return U, V, it, converged
