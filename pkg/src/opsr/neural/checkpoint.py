"""Binary parameter checkpoints: magic, version, JSON header, raw little-endian float64 arrays."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .layers import DTYPE
from .model import HyperParams, OperatorNet

MAGIC = b"OPSRNET\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: OperatorNet) -> bytes:
    state = model.state_dict()
    entries, chunks, offset = [], [], 0
    for name, t in state.items():
        arr = t.detach().cpu().numpy().astype("<f8", copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = {
        "hyperparams": model.hp.to_dict(),
        "kinds": list(model.kinds),
        "tensors": entries,
        "curves": {k: list(v) for k, v in sorted(model.curves.items())},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(hb)) + hb + b"".join(chunks)


def save_checkpoint(model: OperatorNet, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(checkpoint_bytes(model))
    return p


def model_from_bytes(data: bytes) -> OperatorNet:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    try:
        version, hlen = struct.unpack_from("<IQ", data, pos)
    except struct.error:
        raise CheckpointError("truncated header") from None
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    body = np.frombuffer(data, dtype="<f8", offset=pos + hlen)
    model = OperatorNet(HyperParams.from_dict(header["hyperparams"]), header["kinds"])
    state = {}
    for e in header["tensors"]:
        end = e["offset"] + e["count"]
        if end > body.size:
            raise CheckpointError(f"tensor {e['name']} runs past the end of the file")
        state[e["name"]] = torch.tensor(body[e["offset"]:end].reshape(e["shape"]), dtype=DTYPE)
    model.load_state_dict(state)
    model.curves = {k: list(v) for k, v in header["curves"].items()}
    return model


def load_checkpoint(path) -> OperatorNet:
    return model_from_bytes(Path(path).read_bytes())
