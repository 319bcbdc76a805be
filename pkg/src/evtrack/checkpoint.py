"""Checkpoint archives.

A checkpoint is a zip file holding ``manifest.json`` (model config, seed,
step count, free-form metadata and the list of entries) plus one ``.npy``
member per parameter or buffer path, stored little-endian float64.  Member
timestamps are fixed so identical states produce identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .model import DANet, ModelConfig

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(model: DANet, path, step: int = 0, meta: dict | None = None) -> Path:
    path = Path(path)
    arrays = model.state_arrays()
    manifest = {
        "format": "evtrack-checkpoint-1",
        "config": json.loads(model.config.to_json()),
        "seed": model.seed,
        "step": int(step),
        "meta": meta or {},
        "entries": {k: list(v.shape) for k, v in sorted(arrays.items())},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _member(zf, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())
        for name in sorted(arrays):
            npy = io.BytesIO()
            np.save(npy, np.ascontiguousarray(arrays[name], dtype="<f8"), allow_pickle=False)
            _member(zf, f"{name}.npy", npy.getvalue())
    path.write_bytes(buf.getvalue())
    return path


def read_manifest(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("manifest.json"))


def load_checkpoint(path, config: ModelConfig | None = None) -> tuple[DANet, dict]:
    """Rebuild the model stored at ``path``.

    If ``config`` is given it must match the stored one; a mismatch raises
    ``ValueError`` describing the first differing field.
    """
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        stored = ModelConfig.from_dict(manifest["config"])
        if config is not None and config != stored:
            diff = [k for k in manifest["config"] if getattr(config, k) != getattr(stored, k)]
            raise ValueError(f"checkpoint config differs from requested config in {diff}")
        arrays = {
            name: np.load(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            for name in manifest["entries"]
        }
    model = DANet(stored, seed=manifest.get("seed", 0))
    model.load_state_arrays(arrays)
    return model, manifest
