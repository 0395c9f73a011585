"""Backend selection for the per-sensor objective kernels.

The compiled extension is used when it imports; setting
``SO3COVER_PURE_PYTHON=1`` forces the NumPy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
sensor_value = _kernels_py.sensor_value
sensor_value_grad = _kernels_py.sensor_value_grad

if os.environ.get("SO3COVER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        sensor_value = _compiled.sensor_value
        sensor_value_grad = _compiled.sensor_value_grad


def backends():
    """Available ``{name: (sensor_value, sensor_value_grad)}`` pairs."""
    out = {"python": (_kernels_py.sensor_value, _kernels_py.sensor_value_grad)}
    try:
        from . import _kernels as compiled
        out["cython"] = (compiled.sensor_value, compiled.sensor_value_grad)
    except ImportError:
        pass
    return out
