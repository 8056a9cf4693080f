"""Binary checkpoint format for :class:`~u2f.model.U2FNet`.

Layout (little-endian)::

    b"U2FCKPT1"                      magic
    u32                              format version
    u32 n, n bytes                   JSON record: config, seed, epoch
    u32                              tensor count
    repeated:
        u32 n, n bytes               tensor name (UTF-8)
        u32 rank, rank * u32         extents
        prod(extents) * f64          values, row-major
    4 * f64                          f1min, f1max, f2min, f2max (NaN if unset)
"""
import json
import struct

import numpy as np

from .errors import BadMagicError, TruncatedFileError, VersionMismatchError
from .model import U2FConfig, U2FNet

MAGIC = b"U2FCKPT1"
VERSION = 1


def encode_checkpoint(model):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps({"config": model.config.to_dict(), "seed": model.seed,
                       "epoch": model.epoch}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(meta)), meta]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw,
                  struct.pack(f"<I{tensor.ndim}I", tensor.ndim, *tensor.shape),
                  np.ascontiguousarray(tensor, dtype="<f8").tobytes()]
    norm = model.norm if model.norm is not None else (float("nan"),) * 4
    parts.append(struct.pack("<4d", *norm))
    return b"".join(parts)


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(model))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"checkpoint truncated while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def decode_checkpoint(data):
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad checkpoint magic {bytes(data[:len(MAGIC)])!r}")
    r = _Reader(data)
    r.take(len(MAGIC), "magic")
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    meta = json.loads(r.take(r.u32("config length"), "config").decode("utf-8"))
    count = r.u32("tensor count")
    state = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} extents"))
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(r.take(8 * n, f"{name} payload"), dtype="<f8")
        state[name] = values.astype(np.float64).reshape(shape)
    norm = struct.unpack("<4d", r.take(32, "normalization constants"))
    model = U2FNet(U2FConfig.from_dict(meta["config"]), seed=meta["seed"])
    model.load_state_dict(state)
    model.epoch = int(meta["epoch"])
    model.norm = None if any(np.isnan(norm)) else tuple(norm)
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
