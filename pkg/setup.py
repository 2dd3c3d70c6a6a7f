"""Build script for the optional compiled kernels.

The package works without them: if Cython or a compiler is missing the
extension is skipped and the numpy fallback is used at import time.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


def extensions():
    if os.environ.get("OCCVER_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "occver.verifier._kernels",
        ["src/occver/verifier/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
