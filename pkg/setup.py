"""Build the optional compiled kernels; installation proceeds without them on failure.

The extension is tuned for the build machine (-march=native).  Set
RINGLAB_PORTABLE_BUILD=1 when the build will be copied to other machines.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing or Cython failure
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "ringlab._native",
        ["src/ringlab/_native.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"] + ([] if os.environ.get("RINGLAB_PORTABLE_BUILD") else ["-march=native"]),
    )
    try:
        return cythonize([ext], language_level=3, quiet=True)
    except Exception as exc:  # Cython compile error: install the pure-Python package
        print(f"warning: cythonize failed ({exc}); using numpy fallback")
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
