"""Reproducibility manifests written beside command outputs.

A manifest records what produced a directory's contents: the command,
its parameters, a hash of the canonical parameter encoding, the seed,
and library versions. No timestamps, so reruns with identical inputs
write byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from pathlib import Path
from typing import Optional


def config_hash(params: dict) -> str:
    """sha256 over the canonical JSON encoding of the parameters."""
    canon = json.dumps(params, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def versions() -> dict:
    import numpy
    import torch

    from . import __version__

    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "torch": torch.__version__,
    }


def write_manifest(
    out_dir: Path | str,
    command: str,
    params: dict,
    seed: Optional[int] = None,
    inputs: Optional[list] = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "params": params,
        "config_hash": config_hash(params),
        "seed": seed,
        "inputs": [str(p) for p in (inputs or [])],
        "versions": versions(),
    }
    path = out / f"manifest-{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path: Path | str) -> dict:
    return json.loads(Path(path).read_text())
