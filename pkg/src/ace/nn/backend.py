"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; otherwise the
numpy fallback is used.  ``ACE_KERNELS`` overrides the choice:

* ``auto`` (default): compiled if available, else python
* ``compiled``: require the extension, fail loudly if missing
* ``python``: force the numpy fallback
"""

import os

from ace.nn import kernels_py

_choice = os.environ.get("ACE_KERNELS", "auto")
if _choice not in ("auto", "compiled", "python"):
    raise ValueError(f"ACE_KERNELS must be auto, compiled or python, got {_choice!r}")

if _choice == "python":
    kernels = kernels_py
    BACKEND = "python"
else:
    try:
        from ace.nn import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = kernels_py
        BACKEND = "python"
