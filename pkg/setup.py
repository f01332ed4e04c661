import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# The compiled kernels are optional: if the extension cannot be built the
# package falls back to the numpy backend at import time.
extensions = [
    Extension(
        "clvqa.kernels._core",
        ["src/clvqa/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
