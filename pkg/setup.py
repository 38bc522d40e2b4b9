import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "pdtomo._margin_kernels",
                ["src/pdtomo/_margin_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    # Pure-python fallback in pdtomo.kernels covers the missing extension.
    extensions = []

setup(ext_modules=extensions)
