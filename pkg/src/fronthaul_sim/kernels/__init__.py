"""Hot-loop kernels with a numba backend and a pure-numpy fallback.

The backend is picked once at import time. Set ``FRONTHAUL_SIM_NUMBA=0`` to
force numpy; numba is also skipped automatically when it cannot be imported.
Both backends expose identical function signatures.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _numpy as numpy_backend

__all__ = [
    "BACKEND",
    "backends",
    "cnormal_from_raw",
    "herm2_eigvalsh",
    "numpy_backend",
    "row_log2_1p",
    "sum_log2_1p",
    "uniform_from_raw",
    "waterfill_rows",
    "waterfill_sums",
]


def _load_numba() -> ModuleType | None:
    try:
        from . import _numba
    except ImportError:
        return None
    return _numba


def _wanted() -> bool:
    return os.environ.get("FRONTHAUL_SIM_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


numba_backend = _load_numba() if _wanted() else None
_active = numba_backend if numba_backend is not None else numpy_backend
BACKEND = "numba" if _active is numba_backend else "numpy"


def backends() -> dict[str, ModuleType]:
    """All importable backends keyed by name (numba is loaded on demand)."""
    found = {"numpy": numpy_backend}
    nb = numba_backend if numba_backend is not None else _load_numba()
    if nb is not None:
        found["numba"] = nb
    return found


uniform_from_raw = _active.uniform_from_raw
cnormal_from_raw = _active.cnormal_from_raw
sum_log2_1p = _active.sum_log2_1p
row_log2_1p = _active.row_log2_1p
waterfill_sums = _active.waterfill_sums
waterfill_rows = _active.waterfill_rows
herm2_eigvalsh = _active.herm2_eigvalsh
