"""Element-level assembly kernels.

The per-triangle loops are the only hot numeric loops in the package that are
not already delegated to BLAS/SuperLU, so they come in two interchangeable
flavors: numba ``@njit`` kernels and vectorized pure-numpy fallbacks.  The
active backend is chosen once at import time:

* ``TRRBOPT_PURE_NUMPY=1`` in the environment forces the numpy path,
* otherwise numba is used when importable.

Both paths perform the identical per-element arithmetic, so the produced
matrices agree bit for bit; ``benchmarks/bench_kernels.py`` compares their
throughput.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("TRRBOPT_PURE_NUMPY", "0") not in ("", "0", "false", "False")

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


USE_NUMBA = NUMBA_AVAILABLE and not _FORCE_NUMPY


def backend() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations (vectorized over elements)
# ---------------------------------------------------------------------------

def _stiffness_entries_numpy(tx, ty, coef):
    b0 = ty[:, 1] - ty[:, 2]
    b1 = ty[:, 2] - ty[:, 0]
    b2 = ty[:, 0] - ty[:, 1]
    c0 = tx[:, 2] - tx[:, 1]
    c1 = tx[:, 0] - tx[:, 2]
    c2 = tx[:, 1] - tx[:, 0]
    area2 = tx[:, 0] * b0 + tx[:, 1] * b1 + tx[:, 2] * b2  # 2*area, signed
    scale = coef / (2.0 * area2)
    b = np.stack([b0, b1, b2], axis=1)
    c = np.stack([c0, c1, c2], axis=1)
    vals = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) * scale[:, None, None]
    return vals.reshape(-1, 9)


def _mass_entries_numpy(tx, ty, coef):
    b0 = ty[:, 1] - ty[:, 2]
    b1 = ty[:, 2] - ty[:, 0]
    b2 = ty[:, 0] - ty[:, 1]
    area2 = tx[:, 0] * b0 + tx[:, 1] * b1 + tx[:, 2] * b2
    w = coef * area2 / 24.0  # area/12
    pattern = np.array([2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0])
    return w[:, None] * pattern[None, :]


def _cell_load_numpy(tx, ty, coef):
    b0 = ty[:, 1] - ty[:, 2]
    b1 = ty[:, 2] - ty[:, 0]
    b2 = ty[:, 0] - ty[:, 1]
    area2 = tx[:, 0] * b0 + tx[:, 1] * b1 + tx[:, 2] * b2
    w = coef * area2 / 6.0  # area/3
    return np.repeat(w[:, None], 3, axis=1)


# ---------------------------------------------------------------------------
# numba kernels (same arithmetic, explicit loops)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _stiffness_entries_numba(tx, ty, coef):  # pragma: no cover - compiled
    n = tx.shape[0]
    vals = np.empty((n, 9))
    for t in range(n):
        b0 = ty[t, 1] - ty[t, 2]
        b1 = ty[t, 2] - ty[t, 0]
        b2 = ty[t, 0] - ty[t, 1]
        c0 = tx[t, 2] - tx[t, 1]
        c1 = tx[t, 0] - tx[t, 2]
        c2 = tx[t, 1] - tx[t, 0]
        area2 = tx[t, 0] * b0 + tx[t, 1] * b1 + tx[t, 2] * b2
        scale = coef[t] / (2.0 * area2)
        bb = (b0, b1, b2)
        cc = (c0, c1, c2)
        k = 0
        for i in range(3):
            for j in range(3):
                vals[t, k] = (bb[i] * bb[j] + cc[i] * cc[j]) * scale
                k += 1
    return vals


@njit(cache=True)
def _mass_entries_numba(tx, ty, coef):  # pragma: no cover - compiled
    n = tx.shape[0]
    vals = np.empty((n, 9))
    for t in range(n):
        b0 = ty[t, 1] - ty[t, 2]
        b1 = ty[t, 2] - ty[t, 0]
        b2 = ty[t, 0] - ty[t, 1]
        area2 = tx[t, 0] * b0 + tx[t, 1] * b1 + tx[t, 2] * b2
        w = coef[t] * area2 / 24.0
        for i in range(3):
            for j in range(3):
                vals[t, 3 * i + j] = 2.0 * w if i == j else w
    return vals


@njit(cache=True)
def _cell_load_numba(tx, ty, coef):  # pragma: no cover - compiled
    n = tx.shape[0]
    vals = np.empty((n, 3))
    for t in range(n):
        b0 = ty[t, 1] - ty[t, 2]
        b1 = ty[t, 2] - ty[t, 0]
        b2 = ty[t, 0] - ty[t, 1]
        area2 = tx[t, 0] * b0 + tx[t, 1] * b1 + tx[t, 2] * b2
        w = coef[t] * area2 / 6.0
        for i in range(3):
            vals[t, i] = w
    return vals


if USE_NUMBA:
    stiffness_entries = _stiffness_entries_numba
    mass_entries = _mass_entries_numba
    cell_load = _cell_load_numba
else:
    stiffness_entries = _stiffness_entries_numpy
    mass_entries = _mass_entries_numpy
    cell_load = _cell_load_numpy

# exported for parity tests and benchmarking, independent of the env flag
numpy_kernels = {
    "stiffness": _stiffness_entries_numpy,
    "mass": _mass_entries_numpy,
    "cell_load": _cell_load_numpy,
}
numba_kernels = {
    "stiffness": _stiffness_entries_numba,
    "mass": _mass_entries_numba,
    "cell_load": _cell_load_numba,
}
