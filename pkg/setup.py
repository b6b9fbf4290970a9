from setuptools import Extension, setup

import numpy
from Cython.Build import cythonize

extensions = [
    Extension(
        "partpool.kernels._search_cy",
        ["src/partpool/kernels/_search_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": 3}))
