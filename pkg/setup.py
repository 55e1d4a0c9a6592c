"""Builds the optional compiled proof-of-work kernel.

If Cython, a C compiler or OpenSSL headers are missing the package still
installs and runs on the pure-Python kernel.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernel not built ({exc}); using pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: {ext.name} not built ({exc}); using pure Python")


def extensions():
    if os.environ.get("SWARMCHAIN_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize

        return cythonize(
            [
                Extension(
                    "swarmchain._pow",
                    ["src/swarmchain/_pow.pyx"],
                    libraries=["crypto"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # noqa: BLE001
        print(f"warning: cythonize failed ({exc}); using pure Python")
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
