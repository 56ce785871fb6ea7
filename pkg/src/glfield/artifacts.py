"""Content-addressed run directories and their manifests.

A run writes into ``<output_dir>/<experiment>-<address[:16]>/``.  Files are
first written to a scratch directory; the finished directory is renamed into
place, so an existing run directory is never modified.  Rerunning an
identical config regenerates the files and checks that the hashes agree.
"""
from __future__ import annotations

import json
import os
import platform
import shutil
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._core import BACKEND
from .errors import IntegrityError
from .store import sha256_file

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1


def platform_info() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "machine": platform.machine(), "system": platform.system(), "glfield": __version__,
            "backend": BACKEND}


class RunDir:
    """Scratch directory that becomes ``final`` on commit."""

    def __init__(self, output_dir, name: str):
        self.root = Path(output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.final = self.root / name
        self.path = Path(tempfile.mkdtemp(prefix=f".{name}.", dir=self.root))
        self.inputs: list[dict] = []

    def file(self, rel: str) -> Path:
        p = self.path / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, rel: str, text: str) -> Path:
        p = self.file(rel)
        p.write_text(text)
        return p

    def write_json(self, rel: str, obj) -> Path:
        return self.write_text(rel, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def add_input(self, path, role: str):
        p = Path(path)
        self.inputs.append({"path": str(p.resolve()), "role": role, "sha256": sha256_file(p)})

    def _artifacts(self) -> list[dict]:
        out = []
        for p in sorted(self.path.rglob("*")):
            if p.is_file() and p.name != MANIFEST:
                out.append({"path": p.relative_to(self.path).as_posix(), "bytes": p.stat().st_size,
                            "sha256": sha256_file(p)})
        return out

    def commit(self, experiment: str, address: str, passed: bool | None,
               runtime: dict | None = None) -> tuple[Path, dict, bool]:
        """Write the manifest and move the run into place.

        Returns (manifest path, manifest, reused).  ``reused`` is True when an
        identical run already existed; a differing one raises IntegrityError.
        ``runtime`` (threads, output directory, ...) is recorded but not hashed.
        """
        man = {"format": "glfield-manifest", "version": MANIFEST_VERSION, "experiment": experiment,
               "config_address": address, "artifacts": self._artifacts(), "inputs": self.inputs,
               "passed": passed, "platform": platform_info(), "runtime": runtime or {}}
        (self.path / MANIFEST).write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
        if self.final.exists():
            old = read_manifest(self.final / MANIFEST, verify=True)
            shutil.rmtree(self.path)
            if _hashes(old) != _hashes(man):
                raise IntegrityError(f"{self.final} holds a different result for the same config")
            return self.final / MANIFEST, old, True
        os.replace(self.path, self.final)
        return self.final / MANIFEST, man, False

    def abort(self):
        shutil.rmtree(self.path, ignore_errors=True)


def _hashes(man: dict) -> dict:
    return {a["path"]: a["sha256"] for a in man["artifacts"]}


def read_manifest(path, verify: bool = True) -> dict:
    """Load a manifest; with ``verify`` recompute every artifact hash."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    try:
        man = json.loads(p.read_text())
    except OSError as exc:
        raise IntegrityError(f"cannot read manifest {p}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"manifest {p} is not valid JSON (line {exc.lineno}, column {exc.colno})") from None
    if man.get("format") != "glfield-manifest":
        raise IntegrityError(f"{p} is not a manifest")
    man["_dir"] = str(p.parent)
    if verify:
        for a in man["artifacts"]:
            f = p.parent / a["path"]
            if not f.is_file():
                raise IntegrityError(f"artifact {f} listed in {p} is missing")
            if sha256_file(f) != a["sha256"]:
                raise IntegrityError(f"artifact {f} does not match the hash recorded in {p}")
    return man
