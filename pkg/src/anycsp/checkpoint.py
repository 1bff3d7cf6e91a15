"""Binary parameter checkpoints.

Layout: the magic ``ACSPv1``, a little-endian uint32 header length, a UTF-8
JSON header with hyperparameters and the ordered ``[name, shape]`` list,
then every parameter as little-endian float64 in that order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .policy import PolicyParameters

MAGIC = b"ACSPv1"


class CheckpointError(ValueError):
    pass


def dumps(params: PolicyParameters) -> bytes:
    named = params.named_parameters()
    header = dict(params.hyperparameters())
    header["params"] = [[k, list(t.data.shape)] for k, t in named]
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in named)
    return MAGIC + struct.pack("<I", len(hb)) + hb + body


def loads(blob: bytes) -> PolicyParameters:
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise CheckpointError("truncated header")
    (hlen,) = struct.unpack("<I", blob[off:off + 4])
    off += 4
    try:
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"bad header: {e}") from None
    off += hlen
    params = PolicyParameters(header["d"], header["aggregation"], header["use_uc"])
    expected = [[k, list(t.data.shape)] for k, t in params.named_parameters()]
    if header["params"] != expected:
        raise CheckpointError("parameter layout does not match this policy version")
    state = {}
    for k, shape in expected:
        n = int(np.prod(shape))
        if len(blob) < off + 8 * n:
            raise CheckpointError("truncated parameter data")
        state[k] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(blob):
        raise CheckpointError("trailing bytes after parameter data")
    params.load_state_dict(state)
    return params


def save(params: PolicyParameters, path, seed: int | None = None) -> None:
    """Write the checkpoint and a ``.json`` hyperparameter sidecar."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(params))
    tmp.replace(path)
    side = dict(params.hyperparameters())
    side["seed"] = seed
    path.with_name(path.name + ".json").write_text(json.dumps(side, sort_keys=True) + "\n", encoding="utf-8")


def load(path) -> PolicyParameters:
    return loads(Path(path).read_bytes())
