"""Build script for the optional compiled kernel.

The extension is marked optional: if no C toolchain (or Cython) is
available the install still succeeds and the package falls back to the
pure-numpy kernels in ``fedcache._accel.fallback``.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext = Extension(
        "fedcache._accel._core",
        ["src/fedcache/_accel/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level="3")

setup(ext_modules=ext_modules)
