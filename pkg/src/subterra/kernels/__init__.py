"""Grid kernel backend selection.

Imports the compiled core when available, otherwise the pure NumPy
fallback. Set SUBTERRA_PURE=1 to force the fallback (used by the
benchmark and for debugging).
"""

import os

if os.environ.get("SUBTERRA_PURE"):
    from . import _reference as _impl
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _reference as _impl

BACKEND: str = _impl.BACKEND

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

raycast = _impl.raycast
raycast_batch = _impl.raycast_batch
integrate_rays = _impl.integrate_rays
edt_sq = _impl.edt_sq
los_state_clear = _impl.los_state_clear
solid_length = _impl.solid_length

__all__ = [
    "BACKEND",
    "UNKNOWN",
    "FREE",
    "OCCUPIED",
    "raycast",
    "raycast_batch",
    "integrate_rays",
    "edt_sq",
    "los_state_clear",
    "solid_length",
]
