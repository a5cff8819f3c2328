"""Kernel backend selection: compiled aggregation kernel when available,
numpy fallback otherwise.

Set FEDTRACE_BACKEND=python to force the fallback, FEDTRACE_BACKEND=compiled
to require the extension (ImportError if it was not built). Selection happens
once at import. Aggregation results are bit-identical across backends; the
forward/training math is numpy (BLAS) on both, since measured scalar-loop
replacements lost to it at every relevant size.
"""

from __future__ import annotations

import os

from . import _pykernels

_requested = os.environ.get("FEDTRACE_BACKEND", "auto").strip().lower()

if _requested in ("python", "py", "fallback"):
    _agg = _pykernels
elif _requested in ("auto", "", "compiled", "c"):
    try:
        from . import _kernels as _agg  # type: ignore[no-redef]
    except ImportError:
        if _requested in ("compiled", "c"):
            raise ImportError(
                "FEDTRACE_BACKEND=compiled but fedtrace._kernels is not built; "
                "run `pip install -e . --no-build-isolation`"
            ) from None
        _agg = _pykernels
else:
    raise ValueError(f"unknown FEDTRACE_BACKEND value: {_requested!r}")

forward_batch = _pykernels.forward_batch
train_step = _pykernels.train_step
weighted_sum_inplace = _agg.weighted_sum_inplace


def backend_name() -> str:
    return _agg.BACKEND_NAME
