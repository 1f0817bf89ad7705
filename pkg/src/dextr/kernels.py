"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Only the eigensolver has a compiled version; convolution is already
BLAS-bound through ``np.tensordot`` and a direct loop did not beat it.
Set ``DEXTR_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
jacobi_eigvalsh = _fallback.jacobi_eigvalsh
conv2d = _fallback.conv2d

if not os.environ.get("DEXTR_PURE_PYTHON"):
    try:
        from . import _ext
    except ImportError:  # extension not built
        _ext = None
    if _ext is not None:
        BACKEND = "compiled"
        jacobi_eigvalsh = _ext.jacobi_eigvalsh
