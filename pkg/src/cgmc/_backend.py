"""Selects the compiled kernels when available, else the pure-Python ones.

Set ``CGMC_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernels

python_kernels = _pykernels
compiled_kernels = None

if os.environ.get("CGMC_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as compiled_kernels
    except ImportError:  # extension not built
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
name = "cython" if kernels is compiled_kernels else "python"
