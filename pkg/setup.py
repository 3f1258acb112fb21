import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "flowanneal._ode_core",
                ["src/flowanneal/_ode_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

# The package works without the extension (pure-Python kernel is selected at
# import time), so a missing Cython toolchain only costs speed.
setup(ext_modules=extensions)
