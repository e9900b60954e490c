"""Backend selection for the hot loops.

The compiled extension is used when it was built; set ``FINDBENCH_PURE_PYTHON=1``
to force the numpy/pure-Python reference implementation.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from findbench import _kernels_py

log = logging.getLogger(__name__)


def compiled_backend() -> ModuleType | None:
    try:
        from findbench import _kernels
    except ImportError:
        return None
    return _kernels


def python_backend() -> ModuleType:
    return _kernels_py


def _select() -> tuple[ModuleType, str]:
    if os.environ.get("FINDBENCH_PURE_PYTHON", "").strip() not in ("", "0"):
        return _kernels_py, "python"
    mod = compiled_backend()
    if mod is None:
        log.debug("compiled kernels unavailable; using pure-Python fallback")
        return _kernels_py, "python"
    return mod, "cython"


_impl, BACKEND = _select()

mlp_loss_grad = _impl.mlp_loss_grad
consistent_pairs = _impl.consistent_pairs
consistent_singles = _impl.consistent_singles
apply_batch = _impl.apply_batch
