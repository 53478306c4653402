"""Build script: compiles the accelerated kernels when Cython is available.

The package is fully functional without the extension; ``streamdp._accel``
falls back to NumPy implementations at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "streamdp._accel._kernels",
                ["src/streamdp/_accel/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
