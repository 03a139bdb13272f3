"""Checkpoint files: named parameter tensors with shapes, in npz containers.

Fields are written in sorted name order so the container layout is
deterministic for a given parameter set.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np


def save_params(path: str, state: dict[str, np.ndarray]) -> None:
    """Writes a parameter dict atomically (temp file + rename)."""
    ordered = {k: np.asarray(state[k]) for k in sorted(state)}
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **ordered)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path: str) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        return {k: np.asarray(data[k]) for k in data.files}


def split_bundle(state: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Extracts ``prefix/``-scoped entries of a bundled checkpoint."""
    tag = prefix + "/"
    return {k[len(tag):]: v for k, v in state.items() if k.startswith(tag)}


def merge_bundle(**groups: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Joins named parameter groups into one flat dict with ``name/`` prefixes."""
    out: dict[str, np.ndarray] = {}
    for prefix, state in groups.items():
        for k, v in state.items():
            out[f"{prefix}/{k}"] = v
    return out
