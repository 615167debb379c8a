"""Single-file checkpoint container.

Layout: one ASCII header line ``visnir-checkpoint <format_version> <n>``
where ``n`` is the byte length of the JSON manifest that follows, then the
manifest, then a contiguous little-endian payload.  The manifest lists every
parameter entry as (name, shape, dtype, byte offset into the payload) plus
free-form metadata (training config snapshot, RNG states, counters).

Round trips are bit-identical; writes go to a temp file in the same
directory and are renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .exceptions import DataError

MAGIC = "visnir-checkpoint"
FORMAT_VERSION = 1

# dtypes are pinned to explicit little-endian codes so payloads are portable
_DTYPE_CODES = {
    np.dtype(np.float32): "<f4",
    np.dtype(np.float64): "<f8",
    np.dtype(np.int64): "<i8",
    np.dtype(np.int32): "<i4",
    np.dtype(np.uint8): "|u1",
    np.dtype(np.bool_): "|b1",
}


@dataclass
class EntrySpec:
    name: str
    shape: tuple
    dtype: str
    offset: int


@dataclass
class CheckpointManifest:
    format_version: int
    step: int
    epoch: int
    entries: list[EntrySpec]
    meta: dict = field(default_factory=dict)
    path: Path | None = None

    @property
    def train_config(self) -> dict:
        return self.meta.get("train_config", {})

    @property
    def seed_state(self) -> dict:
        return self.meta.get("rng", {})


def _as_le_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().contiguous().numpy()
    arr = np.ascontiguousarray(value)
    if arr.dtype not in _DTYPE_CODES:
        raise DataError(f"unsupported checkpoint dtype {arr.dtype}")
    return arr.astype(_DTYPE_CODES[arr.dtype], copy=False)


def save_checkpoint(path: Path, arrays: dict, meta: dict) -> CheckpointManifest:
    """Write entries and metadata to ``path`` atomically."""
    path = Path(path)
    names = list(arrays)
    if len(set(names)) != len(names):
        raise DataError("duplicate entry names in checkpoint")

    blobs, entries, offset = [], [], 0
    for name in names:
        arr = _as_le_array(arrays[name])
        raw = arr.tobytes()
        entries.append(EntrySpec(name, tuple(arr.shape), arr.dtype.str, offset))
        blobs.append(raw)
        offset += len(raw)

    manifest_doc = {
        "format_version": FORMAT_VERSION,
        "step": int(meta.get("step", 0)),
        "epoch": int(meta.get("epoch", 0)),
        "entries": [
            {"name": e.name, "shape": list(e.shape), "dtype": e.dtype, "offset": e.offset}
            for e in entries
        ],
        "meta": meta,
    }
    header_json = json.dumps(manifest_doc, sort_keys=True).encode("utf-8")
    head_line = f"{MAGIC} {FORMAT_VERSION} {len(header_json)}\n".encode("ascii")

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head_line)
            fh.write(header_json)
            for raw in blobs:
                fh.write(raw)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return CheckpointManifest(
        FORMAT_VERSION, manifest_doc["step"], manifest_doc["epoch"], entries, meta, path
    )


def load_checkpoint(path: Path) -> tuple[CheckpointManifest, dict]:
    """Read a checkpoint; returns (manifest, name -> numpy array)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii", errors="replace").split()
        if len(head) != 3 or head[0] != MAGIC:
            raise DataError(f"{path} is not a visnir checkpoint")
        version, header_len = int(head[1]), int(head[2])
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format version {version}")
        manifest_doc = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()

    entries, arrays = [], {}
    for ent in manifest_doc["entries"]:
        spec = EntrySpec(ent["name"], tuple(ent["shape"]), ent["dtype"], ent["offset"])
        entries.append(spec)
        dt = np.dtype(spec.dtype)
        count = int(np.prod(spec.shape, dtype=np.int64)) if spec.shape else 1
        raw = payload[spec.offset : spec.offset + count * dt.itemsize]
        if len(raw) != count * dt.itemsize:
            raise DataError(f"checkpoint payload truncated at entry {spec.name}")
        arrays[spec.name] = np.frombuffer(raw, dtype=dt).reshape(spec.shape).copy()

    manifest = CheckpointManifest(
        manifest_doc["format_version"],
        manifest_doc["step"],
        manifest_doc["epoch"],
        entries,
        manifest_doc["meta"],
        path,
    )
    return manifest, arrays


def module_arrays(prefix: str, module: torch.nn.Module) -> dict:
    """Flatten a module state dict (parameters and buffers) under a prefix."""
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, prefix: str, arrays: dict) -> None:
    state = {}
    skip = len(prefix) + 1
    for name, arr in arrays.items():
        if name.startswith(prefix + "."):
            state[name[skip:]] = torch.from_numpy(np.ascontiguousarray(arr))
    module.load_state_dict(state)


def optimizer_arrays(prefix: str, opt: torch.optim.Optimizer) -> tuple[dict, dict]:
    """Flatten optimizer state tensors; non-tensor structure goes to metadata."""
    sd = opt.state_dict()
    arrays, skeleton = {}, {"param_groups": sd["param_groups"], "state": {}}
    for pid, slots in sd["state"].items():
        skeleton["state"][str(pid)] = {}
        for slot, value in slots.items():
            if isinstance(value, torch.Tensor):
                arrays[f"{prefix}.{pid}.{slot}"] = value
                skeleton["state"][str(pid)][slot] = "__tensor__"
            else:
                skeleton["state"][str(pid)][slot] = value
    return arrays, skeleton


def restore_optimizer(
    opt: torch.optim.Optimizer, prefix: str, arrays: dict, skeleton: dict
) -> None:
    state = {}
    for pid, slots in skeleton["state"].items():
        rebuilt = {}
        for slot, value in slots.items():
            if value == "__tensor__":
                rebuilt[slot] = torch.from_numpy(
                    np.ascontiguousarray(arrays[f"{prefix}.{pid}.{slot}"])
                )
            else:
                rebuilt[slot] = value
        state[int(pid)] = rebuilt
    opt.load_state_dict({"state": state, "param_groups": skeleton["param_groups"]})
