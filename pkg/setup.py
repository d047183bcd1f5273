import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the compiled core if possible; the package falls back to numpy otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler etc.
            print(f"warning: compiled core not built ({exc}); using pure-Python backend", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def _extensions():
    if os.environ.get("BBMLD_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not available; installing pure-Python backend only", file=sys.stderr)
        return []
    ext = Extension(
        "bbmld._core",
        ["src/bbmld/_core.pyx"],
        extra_compile_args=["-O3"],
        libraries=["m"],
    )
    return cythonize([ext], language_level=3, quiet=True)


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
