"""Hot kernels, compiled when available.

``BACKEND`` is ``"cython"`` when the extension imported and ``"python"``
otherwise.  Setting ``FHCI_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _fallback

if os.environ.get("FHCI_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

adjusted_value_and_score = _impl.adjusted_value_and_score
maximize_adjusted = _impl.maximize_adjusted
quad_forms = _impl.quad_forms
search_grid = _impl.search_grid

__all__ = [
    "BACKEND",
    "adjusted_value_and_score",
    "maximize_adjusted",
    "quad_forms",
    "search_grid",
]
