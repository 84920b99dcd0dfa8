"""Build script for the optional compiled sentence-scan kernel.

The extension is compiled when Cython and a C toolchain are available;
otherwise the install proceeds and the package falls back to the pure
Python scanner at import time. Set NOTEPHENO_PURE_PYTHON=1 to skip the
build explicitly.
"""

import os

from setuptools import setup

ext_modules = []
cmdclass = {}

if os.environ.get("NOTEPHENO_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None

    if cythonize is not None:
        from setuptools.command.build_ext import build_ext

        class OptionalBuildExt(build_ext):
            """Skip the extension instead of failing the whole install."""

            def run(self):
                try:
                    super().run()
                except Exception as exc:  # compiler missing or broken
                    self._skip(exc)

            def build_extension(self, ext):
                try:
                    super().build_extension(ext)
                except Exception as exc:
                    self._skip(exc)

            @staticmethod
            def _skip(exc):
                print(
                    "WARNING: compiled kernel not built (%s); "
                    "falling back to the pure-Python scanner" % exc
                )

        ext_modules = cythonize(
            ["src/notepheno/_speedups.pyx"],
            compiler_directives={"language_level": "3"},
        )
        cmdclass["build_ext"] = OptionalBuildExt

setup(ext_modules=ext_modules, cmdclass=cmdclass)
