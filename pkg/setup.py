import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FINDBENCH_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        try:
            ext_modules = cythonize(
                [
                    Extension(
                        "findbench._kernels",
                        ["src/findbench/_kernels.pyx"],
                        include_dirs=[np.get_include()],
                        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                        optional=True,
                    )
                ],
                compiler_directives={"language_level": "3"},
            )
        except Exception as exc:  # pure-Python fallback stays usable
            print(f"warning: skipping compiled kernels: {exc}")

setup(ext_modules=ext_modules)
