"""Build script: compiles the optional Cython kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compilation is downgraded to a warning.
"""

import warnings

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "fedsim.kernels._core",
                ["src/fedsim/kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level="3",
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    warnings.warn(f"building without compiled kernels: {exc}")
    extensions = []

setup(ext_modules=extensions)
