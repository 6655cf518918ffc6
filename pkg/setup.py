import os

import numpy as np
from setuptools import setup

ext_modules = []
if not os.environ.get("STFNET_NO_EXT"):
    try:
        from Cython.Build import cythonize

        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "stfnet._fft_c",
                    ["src/stfnet/_fft_c.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython: the package still works through the numpy kernels.
        ext_modules = []

setup(ext_modules=ext_modules)
