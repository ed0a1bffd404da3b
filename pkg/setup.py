"""Build script for the optional compiled kernel core.

The package works without the extension (a pure numpy fallback is selected
at import time), so a failed compile only costs speed, not functionality.
Build in place for source checkouts with:

    python setup.py build_ext --inplace
"""
from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "recgnn.backend._kernels",
                ["src/recgnn/backend/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
