"""Named hierarchical parameter store and the binary checkpoint format.

Entries live under dotted names ("them.l2.align_fine.kernel").  Learnable
entries are tensors the optimizer updates; buffers are fixed tensors (the
Sobel bases) or mutable running statistics.  The store is what gets counted,
saved, and restored.

Checkpoint layout (all little-endian):

    magic  b"MHEN"
    u32    format version (1)
    u32    entry count
    per entry:
        u16  name length, then UTF-8 name
        u8   dtype code (1=float64, 2=float32, 3=int64, 4=uint8)
        u8   flags (bit0: learnable)
        u8   ndim, then u32 dims
        u64  payload offset, u64 payload byte length
    raw payloads, C order
"""

import struct
from dataclasses import dataclass

import numpy as np

from .functional import RunningStats
from .tensor import Tensor

MAGIC = b"MHEN"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float64): 1,
    np.dtype(np.float32): 2,
    np.dtype(np.int64): 3,
    np.dtype(np.uint8): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class Entry:
    array: np.ndarray        # shared storage (tensor .data or stats array)
    learnable: bool
    tensor: Tensor | None = None


class ParamStore:
    """Flat ordered mapping of dotted names to parameters and buffers."""

    def __init__(self):
        self._entries: dict[str, Entry] = {}

    def add_param(self, name, array, dtype):
        # entries own their storage: copy so callers cannot alias two entries
        t = Tensor(np.array(array, dtype=dtype), requires_grad=True)
        self._register(name, Entry(t.data, True, t))
        return t

    def add_buffer(self, name, array, dtype):
        t = Tensor(np.array(array, dtype=dtype), requires_grad=False)
        self._register(name, Entry(t.data, False, t))
        return t

    def add_stats(self, name, channels, dtype):
        stats = RunningStats(channels, dtype)
        self._register(name + ".running_mean", Entry(stats.mean, False))
        self._register(name + ".running_var", Entry(stats.var, False))
        return stats

    def _register(self, name, entry):
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._entries[name] = entry

    def names(self):
        return list(self._entries)

    def entry(self, name):
        return self._entries[name]

    def learnable(self):
        """(name, Tensor) pairs the optimizer may update, in creation order."""
        return [(n, e.tensor) for n, e in self._entries.items() if e.learnable]

    def zero_grad(self):
        for _, t in self.learnable():
            t.zero_grad()

    def census(self):
        """Learnable element counts per top-level group, plus the total."""
        groups = {}
        for name, e in self._entries.items():
            if not e.learnable:
                continue
            top = name.split(".", 1)[0]
            groups[top] = groups.get(top, 0) + e.array.size
        return {"groups": groups, "total": sum(groups.values())}

    def state_arrays(self):
        return {n: e.array for n, e in self._entries.items()}

    # -- serialization ---------------------------------------------------------

    def save(self, path, extra=None):
        """Write the store (and optional extra name->array entries) to ``path``."""
        items = [(n, e.array, e.learnable) for n, e in self._entries.items()]
        for name, arr in sorted((extra or {}).items()):
            items.append((name, np.asarray(arr), False))
        write_checkpoint(path, items)

    def load_arrays(self, arrays):
        """Copy matching arrays into the store in place; shapes must agree.

        Returns the list of store names missing from ``arrays``.
        """
        missing = []
        for name, e in self._entries.items():
            if name not in arrays:
                missing.append(name)
                continue
            src = arrays[name]
            if tuple(src.shape) != tuple(e.array.shape):
                raise ValueError(
                    f"checkpoint entry {name!r} has shape {tuple(src.shape)}, "
                    f"store expects {tuple(e.array.shape)}")
            e.array[...] = src.astype(e.array.dtype)
        return missing


def write_checkpoint(path, items):
    """``items``: iterable of (name, array, learnable)."""
    manifest = bytearray()
    payload = bytearray()
    count = 0
    for name, arr, learnable in items:
        arr = np.ascontiguousarray(arr)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        nb = name.encode("utf-8")
        manifest += struct.pack("<H", len(nb)) + nb
        manifest += struct.pack("<BBB", code, 1 if learnable else 0, arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        manifest += struct.pack("<QQ", len(payload), len(raw))
        payload += raw
        count += 1
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, count))
        fh.write(manifest)
        fh.write(payload)


def read_checkpoint(path):
    """Return {name: array} for every checkpoint entry."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    metas = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        code, _flags, ndim = struct.unpack_from("<BBB", blob, off)
        off += 3
        shape = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
        off += 4 * ndim
        start, nbytes = struct.unpack_from("<QQ", blob, off)
        off += 16
        metas.append((name, code, shape, start, nbytes))
    arrays = {}
    for name, code, shape, start, nbytes in metas:
        dtype = _CODE_DTYPES[code].newbyteorder("<")
        arr = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize,
                            offset=off + start)
        arrays[name] = arr.reshape(shape).astype(_CODE_DTYPES[code])
    return arrays
