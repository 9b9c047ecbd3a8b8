"""Build script for the optional compiled CRF kernel.

The extension is a speedup only: if Cython or a C compiler is unavailable the
package installs anyway and falls back to the pure-numpy kernel at import time
(see mmie/kernels.py).
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise install pure-Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: compiled CRF kernel skipped ({exc}); "
                  "falling back to the pure-numpy kernel")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to the pure-numpy kernel")


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "mmie._crf_cy",
                ["src/mmie/_crf_cy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
