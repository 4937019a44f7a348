"""Builds the camokit._core extension with CMake and packages it."""

import os
import shutil
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = os.path.abspath(os.path.dirname(__file__))
        build_dir = os.path.join(self.build_temp, "cmake")
        os.makedirs(build_dir, exist_ok=True)
        subprocess.check_call(
            [
                "cmake",
                "-S", source_dir,
                "-B", build_dir,
                "-DCMAKE_BUILD_TYPE=Release",
                "-DCAMOKIT_BUILD_TESTS=OFF",
                "-DCAMOKIT_BUILD_CLI=OFF",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ]
        )
        subprocess.check_call(
            ["cmake", "--build", build_dir, "--target", "_core", "-j"]
        )
        module_dir = os.path.join(build_dir, "python", "camokit")
        built = [f for f in os.listdir(module_dir) if f.startswith("_core")]
        if not built:
            raise RuntimeError("cmake did not produce the _core module")
        dest = self.get_ext_fullpath(ext.name)
        os.makedirs(os.path.dirname(dest), exist_ok=True)
        shutil.copyfile(os.path.join(module_dir, built[0]), dest)


setup(
    ext_modules=[CMakeExtension("camokit._core")],
    cmdclass={"build_ext": CMakeBuild},
)
