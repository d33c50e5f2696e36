"""Select the kernel implementation once, at import.

The compiled ``_kernels`` extension is preferred. ``TCMICP_PURE_PYTHON=1``
forces the pure-Python twin, which is also used when the extension was not
built.
"""

import os

if os.environ.get("TCMICP_PURE_PYTHON"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        from . import _kernels_py as kernels

BACKEND: str = kernels.BACKEND
