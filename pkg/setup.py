import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The histogram scan is the hot inner loop of dataset building; the package
# falls back to the numpy implementation when this extension is missing.
ext = Extension(
    "stagelight.lightcodec._scan",
    ["src/stagelight/lightcodec/_scan.pyx"],
    include_dirs=[numpy.get_include()],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level="3") if cythonize else [])
