"""Selected kernel implementations (see :mod:`visemeflow.backend`)."""

from .backend import NUMBA_ENABLED

if NUMBA_ENABLED:
    from ._kernels_numba import lstm_seq_backward, lstm_seq_forward, lstm_step
else:
    from ._kernels_numpy import lstm_seq_backward, lstm_seq_forward, lstm_step

__all__ = ["lstm_seq_forward", "lstm_seq_backward", "lstm_step"]
