"""Kernel backend selection.

The compiled ``_core`` extension is used when it was built; otherwise, or
when ``OBSP_PURE_PYTHON=1`` is set, the pure-Python ``_pycore`` is used.
"""

import os

from . import _pycore

if os.environ.get("OBSP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pycore
    BACKEND = "python"
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _pycore
        BACKEND = "python"
    else:
        BACKEND = "cython"

plan_units = _impl.plan_units
discounted_returns = _impl.discounted_returns

GR, LST, POSB, LST_POSB = _pycore.GR, _pycore.LST, _pycore.POSB, _pycore.LST_POSB
NONE, EDD, LPT, SPT, MAXTP, SEQ_LST = (
    _pycore.NONE, _pycore.EDD, _pycore.LPT, _pycore.SPT, _pycore.MAXTP, _pycore.SEQ_LST)


def backends():
    """Available kernel modules keyed by name, for tests and benchmarks."""
    found = {"python": _pycore}
    try:
        from . import _core
    except ImportError:
        pass
    else:
        found["cython"] = _core
    return found
