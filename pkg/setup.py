"""Build script with an optional Cython extension for the conv/pool kernels.

The extension is a pure speedup; if Cython or a C compiler is missing the
build degrades to the NumPy kernel backend without failing the install.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "unlearnkit._kernels._conv_ops",
        sources=["src/unlearnkit/_kernels/_conv_ops.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


class optional_build_ext(build_ext):
    """Swallow compiler failures so the pure-NumPy backend remains usable."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or toolchain missing
            warnings.warn(f"compiled kernels skipped ({exc}); using NumPy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped ({exc}); using NumPy backend")


setup(
    ext_modules=_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
