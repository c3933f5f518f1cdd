"""Backend selection for the hot kernels.

The compiled Cython module is used when it is importable; otherwise, or when
``SPARSELF_BACKEND=python`` is set, the numpy implementation is used.
"""
import os

from . import _kernels_py as python_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("SPARSELF_BACKEND", "").lower() != "python":
    backend = compiled_backend
else:
    backend = python_backend

BACKEND = backend.NAME
bilinear_gather = backend.bilinear_gather
warp_l1 = backend.warp_l1


def available_backends():
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out
