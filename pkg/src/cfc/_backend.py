"""Kernel selection: compiled extension when available, numpy fallback otherwise.

Set ``CFC_BACKEND=python`` to force the fallback (used by the parity tests
and the benchmark); ``CFC_BACKEND=compiled`` raises if the extension is
missing instead of silently degrading.
"""

from __future__ import annotations

import os

from cfc import _ipm as _python_impl

_requested = os.environ.get("CFC_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _python_impl
    BACKEND = "python"
else:
    try:
        from cfc import _ipm_c as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = _python_impl
        BACKEND = "python"

pinball_fit = _impl.pinball_fit
