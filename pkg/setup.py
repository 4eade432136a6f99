"""Build script for the optional compiled kernel extension.

The package works without the extension (the NumPy reference backend is
selected at import time), so a failed compile downgrades to a warning
rather than breaking the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    # -ffp-contract=off: FMA fusion would change float32 rounding and
    # break bitwise agreement with the reference backend.
    ext_modules = cythonize(
        [
            Extension(
                "anchorvid.kernels._fast",
                ["src/anchorvid/kernels/_fast.pyx"],
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # noqa: BLE001
    print(f"warning: compiled kernels unavailable ({exc}); "
          "installing with the pure NumPy backend", file=sys.stderr)

setup(ext_modules=ext_modules)
