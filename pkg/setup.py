"""Builds the compiled kernel extension.

The extension is optional at runtime: if the build is skipped or fails,
the package falls back to the pure-numpy kernels in fedtrace._pykernels.
-ffp-contract=off keeps the aggregation kernel's float64 accumulation
bit-compatible with the fallback (no FMA fusion).
"""

from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "fedtrace._kernels",
        ["src/fedtrace/_kernels.pyx"],
        extra_compile_args=["-O3", "-march=native", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
