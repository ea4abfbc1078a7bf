import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("DUALVIC_SKIP_EXT"):
    # The compiled kernels are optional: the package falls back to the pure
    # numpy backend when the extension is missing (see dualvic._native).
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "dualvic._native._kernels",
                    ["src/dualvic/_native/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
