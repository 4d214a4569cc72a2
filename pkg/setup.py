import os

from setuptools import Extension, setup

# The compiled kernels are an optional fast path: the package imports and runs
# without them (kernels.py falls back to the numpy implementations), so a missing
# compiler or Cython must not break installation.
ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "genuq._kernels",
        ["src/genuq/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        # -ffast-math lets gcc vectorize the exp() calls in the erf kernel via
        # libmvec; the kernels only ever see finite inputs, and accuracy is
        # checked against the scipy fallback in tests.
        extra_compile_args=["-O3", "-ffast-math", "-fno-finite-math-only"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
except Exception as exc:  # pragma: no cover - only on broken toolchains
    if os.environ.get("GENUQ_REQUIRE_EXT"):
        raise
    print(f"building without compiled kernels: {exc}")

setup(ext_modules=ext_modules)
