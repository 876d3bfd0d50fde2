"""Build script for the optional compiled transfer kernel.

The package is pure Python plus one Cython extension (gslift._kernels)
that accelerates the per-Gaussian motion-transfer inner loop. If Cython
or a C compiler is unavailable the build silently skips the extension
and the package falls back to the numpy implementation at import time.
Set GSLIFT_NO_EXT=1 to force a pure-Python install.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Never fail the install because the extension did not compile."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: skipping compiled kernels ({exc}); "
                  "pure-numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: could not build {ext.name} ({exc}); "
                  "pure-numpy fallback will be used")


ext_modules = []
cmdclass = {}
if not os.environ.get("GSLIFT_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext = Extension(
            "gslift._kernels",
            sources=["src/gslift/_kernels.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3", "-fopenmp"],
            extra_link_args=["-fopenmp"],
        )
        ext_modules = cythonize([ext], language_level=3)
        cmdclass["build_ext"] = optional_build_ext
    except ImportError:
        pass

setup(ext_modules=ext_modules, cmdclass=cmdclass)
