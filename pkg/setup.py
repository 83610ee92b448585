"""Build script for the compiled convolution kernels.

The package works without the extension (a pure-numpy fallback is selected
at import time), so a failed build only costs speed on conv workloads.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "prunekit.backend._convkernels",
                sources=["src/prunekit/backend/_convkernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
