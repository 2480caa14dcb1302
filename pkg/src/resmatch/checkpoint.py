"""Checkpoint files: a flat npz archive of named parameter arrays plus a
JSON header under the reserved key ``__header__``."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import MissingInput

_HEADER_KEY = "__header__"


def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """State dict (parameters and buffers) as numpy arrays."""
    out = {}
    for key, value in module.state_dict().items():
        out[prefix + key] = value.detach().cpu().numpy().copy()
    return out


def load_module_arrays(module: torch.nn.Module, arrays: dict, prefix: str = "") -> None:
    state = {}
    for key, target in module.state_dict().items():
        source = arrays.get(prefix + key)
        if source is None:
            raise MissingInput(f"checkpoint missing array {prefix + key!r}")
        state[key] = torch.from_numpy(np.asarray(source).copy()).to(target.dtype)
    module.load_state_dict(state)


def save_checkpoint(path, arrays: dict[str, np.ndarray], header: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(arrays)
    payload[_HEADER_KEY] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8
    )
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp.npz")
    os.close(fd)
    try:
        np.savez(tmp, **payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"checkpoint {path} does not exist")
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files if k != _HEADER_KEY}
        header = json.loads(bytes(data[_HEADER_KEY]).decode()) if _HEADER_KEY in data.files else {}
    return arrays, header


def arrays_checksum(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for key in sorted(arrays):
        digest.update(key.encode())
        digest.update(np.ascontiguousarray(arrays[key]).tobytes())
    return digest.hexdigest()[:16]


def module_checksum(module: torch.nn.Module) -> str:
    return arrays_checksum(module_arrays(module))
