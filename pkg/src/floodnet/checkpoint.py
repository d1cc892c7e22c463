"""Binary checkpoint format for parameter stores.

Layout (little endian throughout):
  magic "XFLD" | version u8 | count u32 | count entries
each entry:
  name_len u16 | name utf-8 | rank u8 | rank extents as u64 | data f64
Trainable values are stored under their names; running-statistic buffers
under a "buffer." prefix. Optimizer moments are not persisted.
"""

from __future__ import annotations

import struct

import numpy as np

from .params import ParamStore

MAGIC = b"XFLD"
VERSION = 1
BUFFER_PREFIX = "buffer."


class CheckpointError(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    out = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return out + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(path: str, store: ParamStore) -> int:
    """Writes all parameter values and buffers; returns the byte size."""
    items = [(n, store.entries[n].value) for n in sorted(store.entries)]
    items += [(BUFFER_PREFIX + n, store.buffers[n]) for n in sorted(store.buffers)]
    blob = MAGIC + struct.pack("<BI", VERSION, len(items))
    for name, arr in items:
        blob += _pack_entry(name, arr)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def load_checkpoint(path: str) -> ParamStore:
    """Parses a checkpoint into a fresh store (zeroed grads and moments)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 9:
        raise CheckpointError(0, "file shorter than header")
    if blob[:4] != MAGIC:
        raise CheckpointError(0, f"bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != VERSION:
        raise CheckpointError(4, f"unsupported version {version}")
    store = ParamStore(seed=0)
    off = 9
    for _ in range(count):
        if off + 2 > len(blob):
            raise CheckpointError(off, "truncated name length")
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + name_len > len(blob):
            raise CheckpointError(off, "truncated name")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        if off + 1 > len(blob):
            raise CheckpointError(off, "truncated rank")
        rank = blob[off]
        off += 1
        if rank > 4:
            raise CheckpointError(off - 1, f"rank {rank} exceeds 4")
        if off + 8 * rank > len(blob):
            raise CheckpointError(off, "truncated extents")
        shape = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        numel = int(np.prod(shape)) if rank else 1
        nbytes = 8 * numel
        if off + nbytes > len(blob):
            raise CheckpointError(off, "truncated data")
        arr = np.frombuffer(blob[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
        if name.startswith(BUFFER_PREFIX):
            store.add_buffer(name[len(BUFFER_PREFIX) :], arr)
        else:
            store.add(name, shape, init="zeros")
            store.entries[name].value = arr
    if off != len(blob):
        raise CheckpointError(off, "trailing bytes after last entry")
    return store
