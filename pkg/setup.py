import os

import numpy as np
from setuptools import Extension, setup

# SDEPCA_NO_EXT=1 installs the pure-Python package only.
ext_modules = []
if not os.getenv("SDEPCA_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        extensions = [
            Extension(
                "sdepca._kernels._ckernels",
                ["src/sdepca/_kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no -ffast-math: increments and sums must be reproducible
                extra_compile_args=["-O3", "-fno-fast-math", "-ffp-contract=off"],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
