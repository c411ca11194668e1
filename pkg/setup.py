import os

from setuptools import Extension, setup

# The compiled kernels are optional: without Cython (or a compiler) the
# package installs and runs on the pure-Python fallback.
ext_modules = []
if os.environ.get("LILEYMAP_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "lileymap._ckernels",
                    ["src/lileymap/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
