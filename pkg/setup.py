import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # build without the compiled kernel; the package falls back to Python
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("TCMICP_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "tcmicp._kernels",
                ["src/tcmicp/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math / fp contraction: results must match the Python kernel bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
