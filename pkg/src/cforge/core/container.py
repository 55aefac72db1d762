"""On-disk containers.

A model (or agent checkpoint) is a directory holding ``manifest.json`` and
one raw little-endian float32 blob per tensor, each guarded by a CRC32.
A dataset split is ``data.bin`` (magic ``CFDS``, u32 count, u32 ndim,
u32 dims..., float32 samples) plus ``labels.bin`` (u32 class ids).
"""
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .graph import Dataset, LayerDescriptor, ModelGraph

MODEL_MAGIC = "CFORGE-MODEL-1"
CKPT_MAGIC = "CFORGE-CKPT-1"
DATA_MAGIC = b"CFDS"
SPLITS = ("train-calib", "validation", "test")


class ContainerError(ValueError):
    pass


def _write_blob(root, name, arr):
    raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    (root / name).write_bytes(raw)
    return {"file": name, "shape": list(arr.shape), "crc32": zlib.crc32(raw)}


def _read_blob(root, entry):
    path = root / entry["file"]
    if not path.exists():
        raise ContainerError(f"missing blob {entry['file']}")
    raw = path.read_bytes()
    n = int(np.prod(entry["shape"])) if entry["shape"] else 1
    if len(raw) != 4 * n:
        raise ContainerError(f"truncated blob {entry['file']}: {len(raw)} bytes, expected {4 * n}")
    if zlib.crc32(raw) != entry["crc32"]:
        raise ContainerError(f"checksum mismatch in {entry['file']}")
    return np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float32)


def _dump(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_model(model, path):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    layers = []
    for t, l in enumerate(model.layers):
        layers.append({
            "kind": l.kind, "stride": l.stride, "pad": l.pad, "source": l.source,
            "relu": l.relu, "in_transform": l.in_transform,
            "weight": _write_blob(root, f"layer{t}.weight.f32", l.weight),
            "bias": _write_blob(root, f"layer{t}.bias.f32", l.bias),
        })
    _dump(root / "manifest.json", {
        "magic": MODEL_MAGIC,
        "input_shape": list(model.input_shape),
        "junctions": [list(j) for j in model.junctions],
        "blob_count": 2 * len(layers),
        "layers": layers,
    })
    return root


def _manifest(root, magic):
    mpath = Path(root) / "manifest.json"
    if not mpath.exists():
        raise ContainerError(f"no manifest.json in {root}")
    try:
        man = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"bad manifest: {exc}") from exc
    if man.get("magic") != magic:
        raise ContainerError(f"bad magic {man.get('magic')!r}, expected {magic!r}")
    return man


def load_model(path):
    root = Path(path)
    man = _manifest(root, MODEL_MAGIC)
    if man.get("blob_count") != 2 * len(man["layers"]):
        raise ContainerError(
            f"manifest lists {len(man['layers'])} layers but blob_count={man.get('blob_count')}")
    layers = []
    for e in man["layers"]:
        layers.append(LayerDescriptor(
            kind=e["kind"], weight=_read_blob(root, e["weight"]), bias=_read_blob(root, e["bias"]),
            stride=e["stride"], pad=e["pad"], source=e["source"], relu=e["relu"],
            in_transform=e["in_transform"]))
    return ModelGraph(tuple(man["input_shape"]), layers, [tuple(j) for j in man["junctions"]])


def save_arrays(arrays, path, meta=None):
    """Checkpoint a name->array mapping in the same blob scheme."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i, (name, arr) in enumerate(sorted(arrays.items())):
        entries[name] = _write_blob(root, f"t{i:04d}.f32", np.asarray(arr))
    _dump(root / "manifest.json", {"magic": CKPT_MAGIC, "meta": meta or {}, "tensors": entries})
    return root


def load_arrays(path):
    root = Path(path)
    man = _manifest(root, CKPT_MAGIC)
    return {k: _read_blob(root, e) for k, e in man["tensors"].items()}, man["meta"]


def save_dataset(data, path):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    x = np.ascontiguousarray(data.inputs, dtype="<f4")
    head = DATA_MAGIC + struct.pack(f"<II{x.ndim - 1}I", len(x), x.ndim - 1, *x.shape[1:])
    (root / "data.bin").write_bytes(head + x.tobytes())
    (root / "labels.bin").write_bytes(np.asarray(data.labels, dtype="<u4").tobytes())
    return root


def load_dataset(path, split=None):
    """Load one split; ``path`` is the split directory or its parent."""
    root = Path(path)
    if split is not None:
        root = root / split
    raw = (root / "data.bin").read_bytes()
    if raw[:4] != DATA_MAGIC:
        raise ContainerError(f"bad dataset magic {raw[:4]!r}")
    count, ndim = struct.unpack_from("<II", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    off = 12 + 4 * ndim
    n = count * int(np.prod(dims))
    if len(raw) - off != 4 * n:
        raise ContainerError("truncated dataset payload")
    x = np.frombuffer(raw, dtype="<f4", offset=off).reshape((count,) + dims).astype(np.float32)
    labels = np.frombuffer((root / "labels.bin").read_bytes(), dtype="<u4").astype(np.int64)
    if len(labels) != count:
        raise ContainerError(f"{len(labels)} labels for {count} samples")
    return Dataset(x, labels, split or root.name)
