import ctypes.util
import os
import sys

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

compile_args = ["-O3", "-fopenmp"]
link_args = ["-fopenmp"]
# With glibc's vector math library the exp/log passes vectorise. fast-math
# goes to the compiler only: linking with it would pull in crtfastmath and
# flush denormals for the whole process. The build is tuned for the host
# CPU; DOUBLEPHASE_PORTABLE=1 drops -march=native (SSE2 vectors only).
if sys.platform.startswith("linux") and ctypes.util.find_library("mvec"):
    compile_args.append("-ffast-math")
    if os.environ.get("DOUBLEPHASE_PORTABLE", "") in ("", "0"):
        compile_args.append("-march=native")
    link_args.append("-lmvec")

extensions = [
    Extension(
        "doublephase._kernels",
        ["src/doublephase/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
