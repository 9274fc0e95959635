import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    USE_CYTHON = True
except ImportError:
    USE_CYTHON = False

# LIGHTPATH_NO_EXT=1 installs the pure-Python package only.
BUILD_EXT = os.environ.get("LIGHTPATH_NO_EXT", "") != "1" and USE_CYTHON

extensions = []
if BUILD_EXT:
    extensions = cythonize(
        [
            Extension(
                "lightpath._kernels._ckernels",
                ["src/lightpath/_kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # fp contraction would break bit-parity with the numpy fallback
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
