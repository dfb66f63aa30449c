"""Build the optional Cython kernels; the package falls back to numpy without them."""

import os

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any compiler failure
            self.warn(f"compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            self.warn(f"building {ext.name} failed ({exc}); using numpy fallback")


ext_modules = []
if os.environ.get("LOWRANK_OT_NO_EXT") != "1":
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lowrank_ot._ipfp_core",
                sources=["src/lowrank_ot/_ipfp_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native", "-ffast-math"],
                extra_link_args=["-lmvec"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
