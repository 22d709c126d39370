"""Named weight collections and their binary file format.

File layout (all integers unsigned 32-bit little-endian, values IEEE-754
float32 little-endian)::

    magic    4 bytes   b"SPMW"
    version  1 byte    0x01
    count    u32       number of entries
    entry*   u32 name length, name bytes (UTF-8), u32 rank,
             rank x u32 dims, prod(dims) x f32 values (C order)

Nothing follows the last entry.
"""

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

MAGIC = b"SPMW"
VERSION = 1


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class UnsupportedVersionError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    """Value count disagrees with a declared shape, or trailing bytes remain."""


class ModelWeights(Mapping):
    """Ordered mapping of unique names to float32 arrays."""

    def __init__(self, entries=()):
        self._entries = {}
        items = entries.items() if isinstance(entries, Mapping) else entries
        for name, values in items:
            self.add(name, values)

    def add(self, name, values, shape=None):
        if name in self._entries:
            raise ValueError(f"duplicate weight name {name!r}")
        arr = np.asarray(values, dtype=np.float32)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if arr.size != int(np.prod(shape, dtype=np.int64)):
                raise ShapeMismatchError(
                    f"{name!r}: {arr.size} values for shape {list(shape)}"
                )
            arr = arr.reshape(shape)
        arr = np.array(arr, order="C", copy=True)
        arr.setflags(write=False)
        self._entries[name] = arr

    def __getitem__(self, name):
        return self._entries[name]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        if not isinstance(other, ModelWeights):
            return NotImplemented
        if list(self) != list(other):
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.values(), other.values())
        )

    def __repr__(self):
        return f"ModelWeights({len(self)} entries)"

    def subset(self, prefix):
        """Entries whose name starts with ``prefix``."""
        return ModelWeights((k, v) for k, v in self.items() if k.startswith(prefix))

    def merged(self, other):
        out = ModelWeights(self.items())
        for k, v in other.items():
            out.add(k, v)
        return out


def weights_to_bytes(w):
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(w))]
    for name, arr in w.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"truncated weight file: need {n} bytes for {what} at offset {self.pos}, "
                f"{len(self.buf) - self.pos} left"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def weights_from_bytes(buf):
    r = _Reader(memoryview(buf).tobytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<B", r.take(1, "version"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported weight file version {version}")
    count = r.u32("entry count")
    w = ModelWeights()
    for i in range(count):
        name = r.take(r.u32(f"entry {i} name length"), f"entry {i} name").decode("utf-8")
        rank = r.u32(f"{name!r} rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name!r} dims"))
        n = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.take(4 * n, f"{name!r} values"), dtype="<f4")
        w.add(name, values.astype(np.float32), shape=dims)
    if r.pos != len(r.buf):
        raise ShapeMismatchError(
            f"{len(r.buf) - r.pos} trailing bytes after {count} declared entries"
        )
    return w


def save_weights(w, path):
    Path(path).write_bytes(weights_to_bytes(w))


def load_weights(path):
    return weights_from_bytes(Path(path).read_bytes())
