"""Thread-count resolution for the numba wavefront loops."""

from __future__ import annotations

import contextlib
import os
import warnings

import numba

from diffknap.errors import ConfigurationError

ENV_VAR = "DIFFKNAP_THREADS"

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the system TBB is often too old for numba; prefer OpenMP
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def resolve_threads(threads: int | None = None) -> int:
    """Number of threads to use: explicit argument, then ``$DIFFKNAP_THREADS``, then 1.

    Requests above numba's pool size are clamped with a warning.
    """
    if threads is None:
        raw = os.environ.get(ENV_VAR, "").strip()
        if not raw:
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigurationError(f"${ENV_VAR} must be an integer, got {raw!r}") from None
    threads = int(threads)
    if threads < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {threads}")
    limit = numba.config.NUMBA_NUM_THREADS
    if threads > limit:
        warnings.warn(
            f"requested {threads} threads but numba's pool has {limit}; using {limit}",
            RuntimeWarning,
            stacklevel=3,
        )
        threads = limit
    return threads


@contextlib.contextmanager
def numba_threads(threads: int):
    previous = numba.get_num_threads()
    numba.set_num_threads(threads)
    try:
        yield
    finally:
        numba.set_num_threads(previous)
