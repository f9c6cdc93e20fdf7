"""Binary checkpoint format.

Layout::

    b"WADCKPT1"
    manifest (utf-8 text, one line per record, terminated by an empty line)
        meta <key> <value>
        tensor <name> <d0,d1,...> <count> <byte_offset>
    payload: little-endian float32, concatenated in manifest order

Offsets are relative to the start of the payload.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointCorruptError, CheckpointVersionError, UnknownParameterError

MAGIC = b"WADCKPT1"
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def _encode(ckpt: Checkpoint) -> bytes:
    lines = []
    for k, v in sorted(ckpt.meta.items()):
        if any(c.isspace() for c in k) or "\n" in str(v):
            raise ValueError(f"meta entries must be single tokens: {k!r}")
        lines.append(f"meta {k} {v}")
    offset = 0
    chunks = []
    for name, arr in ckpt.tensors.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor names may not contain whitespace: {name!r}")
        a = np.ascontiguousarray(arr, dtype=_F32)
        shape = ",".join(str(d) for d in a.shape) or "-"
        lines.append(f"tensor {name} {shape} {a.size} {offset}")
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = ("\n".join(lines) + "\n\n").encode("utf-8")
    return MAGIC + manifest + b"".join(chunks)


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    data = _encode(Checkpoint(dict(tensors), {k: str(v) for k, v in (meta or {}).items()}))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    end = data.find(b"\n\n", len(MAGIC))
    if end < 0:
        raise CheckpointCorruptError("manifest terminator missing")
    manifest = data[len(MAGIC):end].decode("utf-8")
    payload = memoryview(data)[end + 2:]
    ckpt = Checkpoint()
    for line in manifest.splitlines():
        parts = line.split(" ")
        if parts[0] == "meta" and len(parts) >= 3:
            ckpt.meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "tensor" and len(parts) == 5:
            _, name, shape_s, count_s, off_s = parts
            shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
            count, off = int(count_s), int(off_s)
            if int(np.prod(shape)) != count:
                raise CheckpointCorruptError(f"{name}: shape {shape} does not hold {count} elements")
            nbytes = count * _F32.itemsize
            if off < 0 or off + nbytes > len(payload):
                raise CheckpointCorruptError(f"{name}: payload truncated")
            arr = np.frombuffer(payload[off:off + nbytes], dtype=_F32).reshape(shape)
            ckpt.tensors[name] = arr.astype(np.float32)
        elif line:
            raise CheckpointCorruptError(f"unparseable manifest line {line!r}")
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def restore(nets: dict, ckpt: Checkpoint) -> None:
    """Load every ``<net>.<param>`` tensor into the matching network, strictly."""
    known = set()
    for netname, net in nets.items():
        sub = ckpt.subset(netname)
        net.set_parameters(sub, strict=True)
        known.update(f"{netname}.{k}" for k in sub)
    stray = [k for k in ckpt.tensors if k not in known and k.split(".")[0] in nets]
    if stray:
        raise UnknownParameterError(f"unknown parameters {stray}")


def net_tensors(nets: dict) -> dict[str, np.ndarray]:
    out = {}
    for netname, net in nets.items():
        for k, v in net.parameters().items():
            out[f"{netname}.{k}"] = v
    return out


def content_hash(tensors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()
