"""Build script: compiles the optional simplex pivot extension.

The package works without the extension (a numpy fallback is selected at
import time); the build therefore tolerates a missing C toolchain.
"""

import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    # -ffp-contract=off keeps the compiled kernel bit-identical to the
    # numpy fallback (no fused multiply-add contraction).
    extensions = cythonize(
        [
            Extension(
                "watersec._kernels._pivot_cy",
                ["src/watersec/_kernels/_pivot_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"watersec: skipping compiled kernel ({exc})", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
