"""Process-level performance knobs for the training hot path.

Two adjustments, both optional and idempotent:

* Raise glibc's mmap threshold so the large per-iteration numpy temporaries
  are served from the reused malloc arena.  mmap'd blocks go back to the
  kernel on free, so a naive allocator pays page-fault costs on every
  training iteration.
* Pin BLAS pools to one thread.  The hot path multiplies many small
  (batch, width) blocks where OpenBLAS multithreading is counterproductive.

Neither changes any computed value.
"""

from __future__ import annotations

import ctypes

_configured = False
_blas_controller = None  # keep the limiter alive for the process lifetime

_M_MMAP_THRESHOLD = -3  # glibc malloc.h


def configure_runtime() -> None:
    global _configured, _blas_controller
    if _configured:
        return
    _configured = True
    try:
        ctypes.CDLL("libc.so.6").mallopt(_M_MMAP_THRESHOLD, 1 << 30)
    except (OSError, AttributeError):
        pass
    try:
        from threadpoolctl import threadpool_limits

        _blas_controller = threadpool_limits(limits=1, user_api="blas")
    except Exception:
        pass
