"""Builds the optional compiled kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import); set EGOEXO_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("EGOEXO_SKIP_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "egoexo.kernels._fast",
                    ["src/egoexo/kernels/_fast.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # -ffp-contract=off keeps the compiled kernels bit-identical
                    # with the numpy fallback (no FMA contraction).
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
