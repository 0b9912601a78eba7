"""Hot-kernel dispatch.

The compiled extension (built from ``_fastk.pyx``) is used when present;
otherwise the numpy reference backend takes over. ``SWAG_KERNELS=numpy``
forces the fallback, ``SWAG_KERNELS=compiled`` makes a missing extension an
error. Both backends implement the same signatures and agree to float64
round-off; ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

from . import numpy_backend

_KERNEL_NAMES = [
    "softmax_rows",
    "softmax_rows_backward",
    "layer_norm_rows",
    "layer_norm_rows_backward",
    "attention_batch",
    "attention_batch_backward",
    "cumulative_key_pool",
    "interval_pool",
    "pool_backward",
    "transition_counts",
]


def _load_backend():
    choice = os.environ.get("SWAG_KERNELS", "auto").lower()
    if choice not in ("auto", "numpy", "compiled"):
        raise ValueError(f"SWAG_KERNELS must be auto|numpy|compiled, got {choice!r}")
    if choice == "numpy":
        return numpy_backend, "numpy"
    try:
        from . import _fastk  # noqa: PLC0415
        return _fastk, "compiled"
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "SWAG_KERNELS=compiled but the extension is not built; "
                "reinstall with Cython available"
            ) from None
        return numpy_backend, "numpy"


_backend, BACKEND_NAME = _load_backend()

softmax_rows = _backend.softmax_rows
softmax_rows_backward = _backend.softmax_rows_backward
layer_norm_rows = _backend.layer_norm_rows
layer_norm_rows_backward = _backend.layer_norm_rows_backward
attention_batch = _backend.attention_batch
attention_batch_backward = _backend.attention_batch_backward
cumulative_key_pool = _backend.cumulative_key_pool
interval_pool = _backend.interval_pool
pool_backward = _backend.pool_backward
transition_counts = _backend.transition_counts

__all__ = _KERNEL_NAMES + ["BACKEND_NAME", "numpy_backend"]
