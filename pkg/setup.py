"""Build script: compiles the optional recurrent-kernel extension.

The extension is a fast path only; the package works without it (the
pure-numpy fallback in ``multirat.kernels`` implements identical
semantics). Set MULTIRAT_PURE_PYTHON=1 to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("MULTIRAT_PURE_PYTHON") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "multirat.kernels._rnn_cy",
                    ["src/multirat/kernels/_rnn_cy.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython available: install with the numpy backend only.
        ext_modules = []

setup(ext_modules=ext_modules)
