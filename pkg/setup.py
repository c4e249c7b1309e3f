import os

import numpy as np
from setuptools import Extension, setup

NUMPY_RANDOM_LIB = os.path.join(os.path.dirname(np.__file__), "random", "lib")


def extensions():
    if os.environ.get("ASSURE_CRT_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "assure_crt.mcmc._gibbs",
        ["src/assure_crt/mcmc/_gibbs.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[NUMPY_RANDOM_LIB],
        libraries=["npyrandom", "m"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False, "cdivision": True, "cpow": True},
    )


setup(ext_modules=extensions())
