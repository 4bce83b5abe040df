"""Binary checkpoints for model weights and normalization buffers.

Layout, all integers little-endian u32:

    magic  b"BARNETKIT1"
    u32    config hash length, then that many ASCII bytes
    u32    record count
    record u32 name length, UTF-8 name, u32 rank, u32 extents...,
           float32 little-endian payload in C order

Records cover trainable parameters and running-statistics buffers
alike, keyed by their registry names, so a reload restores inference
behaviour bit for bit.
"""

import struct

import numpy as np

from .errors import ConfigError, ParseError

__all__ = ["MAGIC", "save_checkpoint", "read_checkpoint", "load_checkpoint"]

MAGIC = b"BARNETKIT1"


def _tensor_records(params, buffers):
    for name, p in params.items():
        yield name, p.data
    for name, b in buffers.items():
        yield name, b


def save_checkpoint(path, params, buffers, config_hash):
    """Write parameters and buffers (dicts of name -> value) to path."""
    records = list(_tensor_records(params, buffers))
    with open(path, "wb") as f:
        f.write(MAGIC)
        hash_bytes = config_hash.encode("ascii")
        f.write(struct.pack("<I", len(hash_bytes)))
        f.write(hash_bytes)
        f.write(struct.pack("<I", len(records)))
        for name, value in records:
            payload = np.asarray(value, dtype="<f4", order="C")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<I", payload.ndim))
            f.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
            f.write(payload.tobytes())


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, count, what):
        if self.pos + count > len(self.blob):
            raise ParseError(f"{self.path}: truncated {what} at byte {self.pos}")
        chunk = self.blob[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def read_checkpoint(path):
    """Return ({name: float32 array}, config_hash) from a checkpoint file."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise ParseError(f"{path}: bad magic at byte 0, not a checkpoint")
    hash_len = r.u32("hash length")
    config_hash = r.take(hash_len, "config hash").decode("ascii")
    count = r.u32("record count")
    records = {}
    for i in range(count):
        name_len = r.u32(f"record {i} name length")
        name = r.take(name_len, f"record {i} name").decode("utf-8")
        rank = r.u32(f"record {i} rank")
        shape = tuple(r.u32(f"record {i} extent") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(4 * size, f"record {i} payload")
        records[name] = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if r.pos != len(blob):
        raise ParseError(f"{path}: {len(blob) - r.pos} trailing bytes "
                         f"at byte {r.pos}")
    return records, config_hash


def load_checkpoint(model, path, expected_hash=None):
    """Restore a model's parameters and buffers in place.

    Returns the stored config hash.  When expected_hash is given a
    mismatch raises ConfigError before anything is touched.
    """
    records, config_hash = read_checkpoint(path)
    if expected_hash is not None and config_hash != expected_hash:
        raise ConfigError(
            f"{path}: checkpoint was trained under config hash "
            f"{config_hash[:12]}..., expected {expected_hash[:12]}...")
    params = model.parameters()
    buffers = model.buffers()
    known = set(params) | set(buffers)
    missing = known - set(records)
    extra = set(records) - known
    if missing or extra:
        raise ConfigError(
            f"{path}: checkpoint does not match model "
            f"(missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]})")
    for name, value in records.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != value.shape:
            raise ConfigError(f"{path}: {name} has shape {value.shape}, "
                              f"model expects {target.shape}")
        target[...] = value.astype(target.dtype)
    return config_hash
