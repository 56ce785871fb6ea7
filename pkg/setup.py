import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffast-math is deliberately absent: the kernels must round like the fallback.
compile_args = ["-O3"]
link_args = []
if os.environ.get("GLFIELD_NO_OPENMP") is None:
    compile_args.append("-fopenmp")
    link_args.append("-fopenmp")

ext = Extension(
    "glfield._core._sweep",
    ["src/glfield/_core/_sweep.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=compile_args,
    extra_link_args=link_args,
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    # without a C compiler the install still succeeds and the NumPy fallback is used
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3))
