"""Kernel backend selection.

The recurrent time-stepping loops exist twice with identical signatures:
numba ``@njit`` kernels and pure-numpy implementations.  On the machines
this was tuned on, the numpy path wins the batched training shapes (its
vectorized exp/tanh beat numba's scalar libm calls, and the matmuls are
BLAS either way) and ties on the per-frame streaming step, so numpy is
the default.  Set ``VISEMEFLOW_NUMBA=1`` before import to select the
numba kernels; ``visemeflow bench --mode backends`` measures both.
"""

import os

_flag = os.environ.get("VISEMEFLOW_NUMBA", "0").strip().lower()
NUMBA_REQUESTED = _flag in ("1", "true", "on")

if NUMBA_REQUESTED:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
