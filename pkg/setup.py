"""Build the optional compiled kernels.

The package works without them; ``contact_est.kernels`` falls back to the
numpy implementation when ``_kernels`` is missing. Set
``CONTACT_EST_NO_EXT=1`` to skip the extension.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CONTACT_EST_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "contact_est._kernels",
                    ["src/contact_est/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
