"""Hot box kernels with a compiled core and a pure-Python fallback.

The Cython extension (``facepyr.kernels._core``) is selected at import time
when it has been built; otherwise the NumPy fallback (``_pure``) is used.
Set the environment variable ``FACEPYR_PURE_KERNELS=1`` to force the
fallback, e.g. for benchmarking. ``ACTIVE_BACKEND`` reports the choice.
"""

import os

from . import _pure

try:
    from . import _core
except ImportError:
    _core = None

if _core is not None and not os.environ.get("FACEPYR_PURE_KERNELS"):
    _impl = _core
else:
    _impl = _pure

ACTIVE_BACKEND = _impl.BACKEND

iou_matrix = _impl.iou_matrix
nms = _impl.nms


def available_backends():
    """Map of backend name to kernel module, for tests and benchmarks."""
    backends = {"python": _pure}
    if _core is not None:
        backends["cython"] = _core
    return backends
