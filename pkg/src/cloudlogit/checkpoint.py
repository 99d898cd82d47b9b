"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"GCLCKPT\\0"
    u32       format version
    u64       header length H
    H bytes   UTF-8 JSON header: dimensions, seed, iteration, rng states,
              train config, free-form metadata, and an ordered tensor table
              of {name, shape}
    ...       every tensor as contiguous little-endian float64, table order
    u32       CRC-32 of everything before it

Tensors are ``param/<key>``, ``velocity/<key>`` and ``trace/loss``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import Model

MAGIC = b"GCLCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class TrainerState:
    iteration: int = 0
    velocity: dict | None = None
    rng_states: dict = field(default_factory=dict)  # stage -> Rng.get_state()
    loss_trace: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, model: Model, state: TrainerState) -> Path:
    path = Path(path)
    tensors = [(f"param/{k}", v) for k, v in model.params.items()]
    if state.velocity is not None:
        tensors += [(f"velocity/{k}", v) for k, v in state.velocity.items()]
    tensors.append(("trace/loss", np.asarray(state.loss_trace, dtype=np.float64)))
    header = {
        "layer_sizes": list(model.layer_sizes),
        "num_classes": model.num_classes,
        "seed": state.seed,
        "iteration": state.iteration,
        "rng_states": {str(k): v for k, v in state.rng_states.items()},
        "config": state.config,
        "meta": state.meta,
        "tensors": [{"name": name, "shape": list(np.shape(t))} for name, t in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for _, t in tensors]
    body = b"".join(parts)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(model, state)``; raises ``CheckpointError`` on any defect."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    try:
        header = json.loads(body[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None

    offset = _PREFIX.size + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(body):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=offset) \
            .astype(np.float64).reshape(shape)
        offset = end
    if offset != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensors")

    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    velocity = {k[len("velocity/"):]: v for k, v in tensors.items() if k.startswith("velocity/")}
    model = Model(tuple(header["layer_sizes"]), int(header["num_classes"]), params)
    state = TrainerState(
        iteration=int(header["iteration"]),
        velocity=velocity or None,
        rng_states={int(k): v for k, v in header["rng_states"].items()},
        loss_trace=tensors.get("trace/loss", np.zeros(0)).tolist(),
        config=header["config"],
        seed=int(header["seed"]),
        meta=header.get("meta", {}),
    )
    return model, state
