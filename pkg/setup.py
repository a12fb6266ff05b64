"""Build hook for the optional compiled co-occurrence kernel.

The package is pure Python plus one Cython extension (``privmass._glcm``)
that accelerates gray-level co-occurrence counting. The extension is
optional: if Cython or a C compiler is unavailable the install still
succeeds and the package falls back to the numpy implementation at import
time (see ``privmass/radiomics.py``).
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Allow the wheel to build even when the extension cannot compile."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - compiler-dependent
            print(f"warning: skipping optional extension build: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - compiler-dependent
            print(f"warning: optional extension {ext.name} failed to build: {exc}")


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - build-env dependent
        return []
    return cythonize(
        [
            Extension(
                "privmass._glcm",
                ["src/privmass/_glcm.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
