"""Backend selection for the scaling kernel: the compiled extension when it
imported cleanly, else the pure-numpy fallback.  ``PDAKIT_BACKEND=python``
forces the fallback; instrumented calls always run the fallback because only
it carries the operation counter."""

from __future__ import annotations

import os

from . import _sinkhorn_py

try:
    from . import _sinkhorn_c
except ImportError:  # extension not built; numpy path serves everything
    _sinkhorn_c = None

_FORCED = os.environ.get("PDAKIT_BACKEND", "").strip().lower()


def active_backend() -> str:
    if _FORCED == "python" or _sinkhorn_c is None:
        return "python"
    return "compiled"


def compiled_available() -> bool:
    return _sinkhorn_c is not None


def scale_columns(A, B, K1, K2, max_iters, tol, counter=None, backend=None):
    choice = backend or active_backend()
    if counter is not None or choice == "python":
        return _sinkhorn_py.scale_columns(A, B, K1, K2, max_iters, tol, counter=counter)
    if _sinkhorn_c is None:
        raise RuntimeError("compiled backend requested but the extension is not built")
    import numpy as np

    return _sinkhorn_c.scale_columns(
        np.ascontiguousarray(A),
        np.ascontiguousarray(B),
        np.ascontiguousarray(K1),
        np.ascontiguousarray(K2),
        int(max_iters),
        float(tol),
    )
