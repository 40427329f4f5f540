"""Build script: compiles the network-simplex kernel when Cython is available.

The package works without the extension (a pure-Python twin of the kernel is
selected at import time), so a missing compiler only costs speed.
Build in place with:  python setup.py build_ext --inplace
"""

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
                "torusalloc._netsimplex",
                ["src/torusalloc/_netsimplex.pyx"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=extensions)
