"""Backend selection for the EM inner loop.

The compiled extension ``_em`` is used when it was built; otherwise the
numpy implementation in ``_em_py`` is used. Setting ``SSPDTOMO_PURE_PYTHON=1``
forces the numpy path.
"""
import os

from . import _em_py

try:
    if os.environ.get("SSPDTOMO_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _em as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
em_run = _compiled.em_run if _compiled is not None else _em_py.em_run
em_run_python = _em_py.em_run
em_run_compiled = _compiled.em_run if _compiled is not None else None
