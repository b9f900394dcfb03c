"""Packet kernel backend selection.

The compiled ``_ckernel`` is used when it was built; otherwise, or when
``DASHSIM_PURE_PYTHON`` is set to a non-empty value, the pure-Python
``_pykernel`` is used. Both expose ``Link`` and ``Engine`` with identical
behaviour.
"""

import os

from . import _pykernel

_impl = _pykernel
if not os.environ.get("DASHSIM_PURE_PYTHON"):
    try:
        from . import _ckernel as _impl
    except ImportError:
        _impl = _pykernel

Link = _impl.Link
Engine = _impl.Engine
BACKEND = _impl.BACKEND

CLIENT = 0
SERVER = 1
PKT_DATA = 0
PKT_ACK = 1
PKT_CTRL = 2


def backends():
    """All importable kernel modules, pure Python first."""
    mods = [_pykernel]
    try:
        from . import _ckernel
    except ImportError:
        pass
    else:
        mods.append(_ckernel)
    return mods
