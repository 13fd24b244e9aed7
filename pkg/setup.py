import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SBDP_NO_EXTENSION"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install; the fallback kernel is used
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "sbdp._ckernel",
                    [os.path.join("src", "sbdp", "_ckernel.pyx")],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: results must match the Python mirror bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
