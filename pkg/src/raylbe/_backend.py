"""Selects the kernel implementation at import time.

The compiled ``_core`` is used when it imports cleanly; setting the
environment variable RAYLBE_PURE_PYTHON=1 forces the pure-Python twin.
"""

import os

from . import _pycore

if os.environ.get("RAYLBE_PURE_PYTHON") == "1":
    core = _pycore
    NAME = "python"
else:
    try:
        from . import _core as core
        NAME = "cython"
    except ImportError:
        core = _pycore
        NAME = "python"

pycore = _pycore
