"""Backend selection for the numerical hot loops.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
pure-Python module ``_kernels_py`` is used. Set ``LEAST_ENERGY_KERNELS=python``
to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LEAST_ENERGY_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

radial_integrate = _impl.radial_integrate
mode_rk4 = _impl.mode_rk4
p1_local = _impl.p1_local
prufer_sweep = _impl.prufer_sweep
linear_sweep = _impl.linear_sweep


def backends():
    """Return the available backend modules keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
