import os

from setuptools import setup

ext_modules = []
if os.environ.get("NPQR_PURE_PYTHON", "") in ("", "0"):
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            "src/npqr/_ckernels.pyx",
            compiler_directives={"language_level": "3"},
        )
        for ext in ext_modules:
            ext.include_dirs.append(numpy.get_include())

setup(ext_modules=ext_modules)
