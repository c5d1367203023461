"""Build script for the compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), but the Cython build is attempted by default because the
fused dense kernels are markedly faster for the small matrices that
dominate training.
"""

import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "ace.nn._kernels",
        ["src/ace/nn/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
