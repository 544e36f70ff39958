"""Build script: compiles the optional native kernel extension.

The extension is marked optional; if no compiler (or no Cython) is
available the install still succeeds and the package falls back to the
pure-numpy kernels at import time.
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("CFBANDIT_SKIP_NATIVE"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "cfbandit._kernels._native",
        sources=["src/cfbandit/_kernels/_native.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=_extensions())
