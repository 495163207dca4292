"""Backend selection for the numerical hot loops.

The compiled Cython extension is used when it imports; otherwise (or when
``CURVLAB_PURE_PYTHON=1`` is set) the numpy twins in ``_pykernels`` are
used.  ``BACKEND`` records which one is active.
"""

import os

from . import _pykernels

if os.environ.get("CURVLAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels
        BACKEND = "python"

jacobi_rk4 = _impl.jacobi_rk4
riccati_rk4 = _impl.riccati_rk4
revolution_orbit = _impl.revolution_orbit
sl2_reduce = _impl.sl2_reduce

__all__ = ["BACKEND", "jacobi_rk4", "riccati_rk4", "revolution_orbit", "sl2_reduce"]
