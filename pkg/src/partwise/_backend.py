"""Kernel backend selection.

The compiled extension (partwise._kernels) is preferred when it imported
cleanly; otherwise the numpy implementation is used. Set PARTWISE_BACKEND
to "c" or "python" to force one (forcing "c" without the extension built is
an error rather than a silent fallback).
"""

from __future__ import annotations

import os

_choice = os.environ.get("PARTWISE_BACKEND", "").strip().lower()
if _choice not in ("", "c", "python"):
    raise ValueError(f"PARTWISE_BACKEND must be 'c' or 'python', got {_choice!r}")

if _choice == "python":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "c":
            raise ImportError(
                "PARTWISE_BACKEND=c but the compiled extension is not available; "
                "build it with `python setup.py build_ext --inplace`"
            ) from None
        from . import _kernels_py as _impl

em_fit = _impl.em_fit
kernel_max_scores = _impl.kernel_max_scores
BACKEND_NAME: str = _impl.BACKEND_NAME


def backend_name() -> str:
    """Name of the active kernel backend: 'c' or 'python'."""
    return BACKEND_NAME


def load_backend(name: str):
    """Import a specific backend module by name (used by the benchmark)."""
    if name == "python":
        from . import _kernels_py

        return _kernels_py
    if name == "c":
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
