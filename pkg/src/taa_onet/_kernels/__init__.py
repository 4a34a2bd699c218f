"""Backend selection for the nodewise vessel kernels.

The compiled ``_gr_core`` extension is used when it imports; otherwise the
NumPy implementation in ``_gr_py`` is used. Setting ``TAA_ONET_PURE=1`` forces
the NumPy backend.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _gr_py

try:
    from . import _gr_core
except ImportError:  # extension not built
    _gr_core = None

_BACKENDS: dict[str, ModuleType | None] = {"compiled": _gr_core, "numpy": _gr_py}

if _gr_core is not None and os.environ.get("TAA_ONET_PURE") != "1":
    BACKEND = "compiled"
else:
    BACKEND = "numpy"


def available() -> list[str]:
    return [name for name, mod in _BACKENDS.items() if mod is not None]


def get_backend(name: str | None = None) -> ModuleType:
    """Kernel module by name (``compiled`` or ``numpy``); default is :data:`BACKEND`."""
    name = BACKEND if name is None else name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}")
    mod = _BACKENDS[name]
    if mod is None:
        raise ImportError(f"backend {name!r} is not available (extension not built)")
    return mod
