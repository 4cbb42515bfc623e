from setuptools import Extension, setup

import numpy as np
from Cython.Build import cythonize

ext = Extension(
    "pdml.solver._cd_fast",
    sources=["src/pdml/solver/_cd_fast.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3", "-march=native", "-ffp-contract=fast"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
