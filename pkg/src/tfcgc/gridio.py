"""Serialization: binary grids, model checkpoints, and text formats.

Grid files hold one or more named real matrices with their axes in a
versioned binary layout (JSON header + row-major 64-bit payload) so
causality maps and images reload bit-exactly. Checkpoints store a config
block plus named parameter tensors with explicit shapes. All writers go
through a write-temp-then-rename step so readers never observe partial
files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile

import numpy as np

GRID_MAGIC = b"TFCGRID1"
CHECKPOINT_MAGIC = b"TFCCKPT1"


class FormatError(ValueError):
    """File contents do not match the declared format."""


def atomic_write(path, data: bytes) -> None:
    """Write bytes to a temp file in the target directory, then rename."""
    path = str(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-grid-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(config) -> str:
    """Stable short hash of a dataclass or mapping, for header stamping."""
    if dataclasses.is_dataclass(config) and not isinstance(config, type):
        payload = dataclasses.asdict(config)
    else:
        payload = dict(config or {})
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _pack(magic: bytes, header: dict, arrays: list[np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True).encode()
    parts = [magic, struct.pack("<Q", len(head)), head]
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def _unpack(magic: bytes, data: bytes) -> tuple[dict, memoryview]:
    if data[: len(magic)] != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    off = len(magic)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + hlen].decode())
    return header, memoryview(data)[off + hlen :]


def write_grid(path, arrays: dict[str, np.ndarray], axes=None, meta=None) -> None:
    """Write named float64 matrices plus their axes and metadata."""
    axes = {k: np.asarray(v, float).tolist() for k, v in (axes or {}).items()}
    entries = []
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.append(arr)
    header = {
        "kind": "grid",
        "version": 1,
        "entries": entries,
        "axes": axes,
        "meta": meta or {},
    }
    atomic_write(path, _pack(GRID_MAGIC, header, payload))


def read_grid(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Read back (arrays, axes, meta) from a grid file."""
    with open(str(path), "rb") as fh:
        data = fh.read()
    header, body = _unpack(GRID_MAGIC, data)
    arrays = {}
    off = 0
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(body):
            raise FormatError("truncated grid payload")
        arr = np.frombuffer(body[off : off + nbytes], dtype="<f8").reshape(shape)
        arrays[entry["name"]] = arr.copy()
        off += nbytes
    axes = {k: np.asarray(v) for k, v in header.get("axes", {}).items()}
    return arrays, axes, header.get("meta", {})


def write_map_csv(path, values: np.ndarray, time_axis, freq_axis) -> None:
    """Debug export: header row of frequencies, one row per time sample."""
    values = np.asarray(values)
    lines = ["time," + ",".join(f"{f:.6g}" for f in freq_axis)]
    for t, row in zip(time_axis, values):
        lines.append(f"{t:.6g}," + ",".join(repr(float(v)) for v in row))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def save_checkpoint(path, config, tensors: dict[str, np.ndarray], extra=None) -> None:
    """Versioned model checkpoint: config block plus named tensors."""
    if dataclasses.is_dataclass(config) and not isinstance(config, type):
        config_block = dataclasses.asdict(config)
    else:
        config_block = dict(config or {})
    names = sorted(tensors)
    entries = [
        {"name": n, "shape": list(np.asarray(tensors[n]).shape)} for n in names
    ]
    header = {
        "kind": "checkpoint",
        "version": 1,
        "config": config_block,
        "entries": entries,
        "extra": extra or {},
    }
    payload = [np.asarray(tensors[n], float) for n in names]
    atomic_write(path, _pack(CHECKPOINT_MAGIC, header, payload))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Read back (config, tensors, extra) from a checkpoint file."""
    with open(str(path), "rb") as fh:
        data = fh.read()
    header, body = _unpack(CHECKPOINT_MAGIC, data)
    if header.get("version") != 1:
        raise FormatError(f"unsupported checkpoint version {header.get('version')}")
    tensors = {}
    off = 0
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(body):
            raise FormatError("truncated checkpoint payload")
        arr = np.frombuffer(body[off : off + nbytes], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = arr.copy()
        off += nbytes
    return header["config"], tensors, header.get("extra", {})


def save_convnet(path, model) -> None:
    """Checkpoint a convolutional model (parameters + running stats)."""
    tensors = dict(model.params)
    tensors.update({f"running:{k}": v for k, v in model.running.items()})
    save_checkpoint(
        path,
        model.config,
        tensors,
        extra={"input_shape": list(model.input_shape), "history": model.history},
    )


def load_convnet(path):
    from . import convnet

    config_block, tensors, extra = load_checkpoint(path)
    config = convnet.ConvNetConfig(**config_block)
    input_shape = tuple(extra["input_shape"])
    model = convnet.build_convnet(config, input_shape)
    for key in model.params:
        model.params[key] = tensors[key]
    for key in model.running:
        model.running[key] = tensors[f"running:{key}"]
    model.history = extra.get("history", [])
    return model


def save_ensemble(path_prefix, ensemble) -> str:
    """Write an ensemble manifest plus one checkpoint per member.

    Returns the manifest path. Member files live next to the manifest as
    ``<prefix>.member<j>.ckpt``.
    """
    path_prefix = str(path_prefix)
    manifest = {
        "kind": "ensemble",
        "version": 1,
        "best_joint": ensemble.best_joint,
        "validation_accuracy": ensemble.validation_accuracy,
        "n_train": ensemble.n_train,
        "n_val": ensemble.n_val,
        "members": [],
    }
    for j, member in enumerate(ensemble.members, start=1):
        member_path = f"{path_prefix}.member{j}.ckpt"
        save_convnet(member_path, member.model)
        manifest["members"].append(
            {
                "file": os.path.basename(member_path),
                "weight": member.weight,
                "weighted_error": member.weighted_error,
            }
        )
    manifest_path = path_prefix + ".ensemble.json"
    atomic_write(manifest_path, json.dumps(manifest, indent=2).encode())
    return manifest_path


def load_ensemble(manifest_path):
    from .boosting import BoostEnsemble, BoostMember

    manifest_path = str(manifest_path)
    with open(manifest_path, encoding="ascii") as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "ensemble" or manifest.get("version") != 1:
        raise FormatError("not a version-1 ensemble manifest")
    directory = os.path.dirname(manifest_path) or "."
    members = []
    for entry in manifest["members"]:
        model = load_convnet(os.path.join(directory, entry["file"]))
        members.append(
            BoostMember(model, entry["weight"], entry["weighted_error"])
        )
    return BoostEnsemble(
        members=members,
        best_joint=manifest["best_joint"],
        validation_accuracy=manifest["validation_accuracy"],
        sample_weight_history=[],
        n_train=manifest["n_train"],
        n_val=manifest["n_val"],
    )


def write_history_csv(path, history: list[dict]) -> None:
    """Training history rows (epoch, train_loss, score) as CSV."""
    lines = ["epoch,train_loss,score"]
    for row in history:
        lines.append(f"{row['epoch']},{row['train_loss']!r},{row['score']!r}")
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def write_tvarx_text(path, model) -> None:
    """Audit listing of a fitted time-varying model: config + term table."""
    lines = [
        "tvarx-model v1",
        f"target {model.target_index}",
        f"predictors {' '.join(str(p) for p in model.predictor_indices)}",
        f"start_sample {model.start_sample}",
        f"final_noise_variance {float(model.noise_variance[-1])!r}",
        "terms (variable lag order scale shift coefficient):",
    ]
    for (var, lag, spec), coef in zip(
        model.selected_terms, model.expansion_coefficients
    ):
        lines.append(
            f"  {var} {lag} {spec.order} {spec.scale} {spec.shift} {float(coef)!r}"
        )
    atomic_write(path, ("\n".join(lines) + "\n").encode())
