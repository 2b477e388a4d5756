import os

from setuptools import Extension, setup

# The compiled matcher is optional: the tokenizer falls back to the pure-Python
# kernel when the extension is missing. Set KUSENT_NO_EXT=1 to skip the build.
ext_modules = []
if os.environ.get("KUSENT_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("kusent._fastmatch", ["src/kusent/_fastmatch.pyx"])],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
