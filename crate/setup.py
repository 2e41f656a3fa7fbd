"""Builds the Rust extension module with cargo; no rust-specific build
backend is required, only setuptools and a toolchain on PATH."""

import os
import shutil
import subprocess
from pathlib import Path

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension

ROOT = Path(__file__).resolve().parent


class CargoExtension(Extension):
    def __init__(self, name: str, manifest: str) -> None:
        super().__init__(name, sources=[])
        self.manifest = manifest


class CargoBuildExt(build_ext):
    def build_extension(self, ext: CargoExtension) -> None:
        subprocess.run(
            ["cargo", "build", "--release", "--manifest-path", str(ROOT / ext.manifest)],
            check=True,
        )
        target_dir = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
        built = target_dir / "release" / "libpacbound_py.so"
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    packages=[],
    ext_modules=[CargoExtension("pacbound_py", "crates/py/Cargo.toml")],
    cmdclass={"build_ext": CargoBuildExt},
)
