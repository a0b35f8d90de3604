"""Builds the optional compiled kernels; the package works without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("CGMC_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            "src/cgmc/_ckernels.pyx",
            compiler_directives={"language_level": 3},
        )
        for ext in ext_modules:
            ext.extra_compile_args = ["-O3"]

setup(ext_modules=ext_modules)
