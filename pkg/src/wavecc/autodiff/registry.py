"""Named parameter registry and the WCCW weights container.

Container layout (little-endian, no padding)::

    magic "WCCW" | version u16 | count u32 |
    per entry: name_len u16, name utf-8, rank u8, extents u32 * rank,
               float32 values
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from collections import OrderedDict

import numpy as np

from wavecc.autodiff.tensor import Tensor
from wavecc.errors import FormatError, NumericError, ShapeError

MAGIC = b"WCCW"
VERSION = 1


class ParamRegistry:
    """Insertion-ordered map from unique names to parameter tensors.

    The module path of an entry is its name without the last component,
    e.g. ``lifting.p1.skip`` for ``lifting.p1.skip.weight``.
    """

    def __init__(self):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, data) -> Tensor:
        if name in self._entries:
            raise ShapeError("duplicate parameter name", name=name)
        t = Tensor(np.array(data, dtype=np.float32), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def items(self):
        return self._entries.items()

    def names(self, prefix: str = ""):
        return [n for n in self._entries if n.startswith(prefix)]

    def subset(self, prefixes):
        """Ordered (name, tensor) pairs whose names start with any prefix."""
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        return [(n, t) for n, t in self._entries.items() if n.startswith(tuple(prefixes))]

    @staticmethod
    def module_path(name: str) -> str:
        return name.rsplit(".", 1)[0]

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def state(self):
        """Copy of every array, keyed by name."""
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def to_bytes(self) -> bytes:
        return dumps(self)

    def digest(self) -> int:
        """First 8 bytes of SHA-256 over the serialized container, as u64."""
        return int.from_bytes(hashlib.sha256(self.to_bytes()).digest()[:8], "little")


def dumps(registry: ParamRegistry) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(registry))]
    for name, t in registry.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise NumericError("refusing to save non-finite tensor", name=name)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def parse(blob: bytes):
    """Decode a container into an ordered dict of float32 arrays."""
    view = memoryview(blob)
    pos = 0

    def read(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("weights container truncated", offset=pos, wanted=n)
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(read(4)) != MAGIC:
        raise FormatError("bad weights magic")
    version, count = struct.unpack("<HI", read(6))
    if version != VERSION:
        raise FormatError("unsupported weights version", version=version)
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", read(2))
        name = bytes(read(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<B", read(1))
        shape = struct.unpack(f"<{rank}I", read(4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(bytes(read(4 * n)), dtype="<f4").reshape(shape)
        if name in out:
            raise FormatError("duplicate tensor name in container", name=name)
        out[name] = values.astype(np.float32)
    if pos != len(view):
        raise FormatError("trailing bytes after weights container", extra=len(view) - pos)
    return out


def save(registry: ParamRegistry, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    blob = dumps(registry)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".wccw-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def assign(registry: ParamRegistry, arrays, remap=None, strict=True):
    """Copy arrays into registry slots after validating everything first.

    ``remap`` maps source names to destination names.  With ``strict`` every
    registry entry must be provided and no unknown name may appear.
    Nothing is mutated if any check fails.
    """
    remap = remap or {}
    staged = []
    seen = set()
    for src, arr in arrays.items():
        dst = remap.get(src, src)
        if dst not in registry:
            if strict:
                raise FormatError("unknown tensor name", name=src)
            continue
        if registry[dst].shape != arr.shape:
            raise ShapeError("tensor shape mismatch", name=dst,
                             expected=registry[dst].shape, found=arr.shape)
        staged.append((dst, arr))
        seen.add(dst)
    if strict:
        missing = [n for n in registry if n not in seen]
        if missing:
            raise FormatError("missing tensors in container", count=len(missing), first=missing[0])
    for dst, arr in staged:
        registry[dst].data = np.array(arr, dtype=np.float32)


def load(registry: ParamRegistry, path, remap=None, strict=True):
    with open(path, "rb") as fh:
        blob = fh.read()
    assign(registry, parse(blob), remap=remap, strict=strict)
