"""Build script: compiles the optional Cython window-aggregation kernel.

The package works without the extension (a pure-Python/numpy fallback is
selected at import time), so any build failure here is non-fatal for the
pure-Python install path.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "demux.windows._agg_cy",
        ["src/demux/windows/_agg_cy.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"demux: skipping Cython extension build ({exc})")

setup(ext_modules=ext_modules)
