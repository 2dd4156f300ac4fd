"""Named trainable parameters and their on-disk checkpoint format.

Checkpoint layout (all integers little-endian, payloads float32 LE,
C order):

    bytes 0..3   magic b"VSCK"
    uint32       format version (currently 1)
    uint32       config length in bytes
    bytes        config JSON (utf-8, sorted keys)
    uint32       tensor count
    per tensor:
        uint32   name length, then name utf-8
        uint32   ndim, then ndim * uint32 extents
        bytes    float32 LE values, prod(extents) items

The config block stores the model configuration dict so a checkpoint is
self-describing; loading returns it verbatim.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError

MAGIC = b"VSCK"
VERSION = 1


class ParameterStore:
    """Ordered name -> Tensor map; every entry requires gradients."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise CheckpointError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def adopt(self, name: str, tensor: Tensor) -> Tensor:
        """Register an existing tensor under a name (keeps graph identity;
        used when differentiating w.r.t. externally held tensors)."""
        if name in self._params:
            raise CheckpointError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def subset(self, prefix: str) -> list[tuple[str, Tensor]]:
        """Parameters whose name starts with the given group prefix."""
        return [(n, t) for n, t in self._params.items() if n.startswith(prefix)]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grad(self, name: str) -> np.ndarray:
        """Gradient of one parameter, zeros if backward never reached it."""
        t = self._params[name]
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())


def save_checkpoint(path, store: ParameterStore, config: dict):
    """Write parameters plus a config dict; atomic on POSIX via rename."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    config_raw = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(config_raw))
    blob += config_raw
    blob += struct.pack("<I", len(store))
    for name, t in store.items():
        raw_name = name.encode("utf-8")
        blob += struct.pack("<I", len(raw_name))
        blob += raw_name
        blob += struct.pack("<I", t.data.ndim)
        for extent in t.data.shape:
            blob += struct.pack("<I", extent)
        blob += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(blob))
    os.replace(tmp, str(path))


class _Reader:
    def __init__(self, path, raw: bytes):
        self.path = str(path)
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    """Read a checkpoint back into a fresh store; returns (store, config)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from e
    r = _Reader(path, raw)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a parameter checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config_raw = r.take(r.u32())
    try:
        config = json.loads(config_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad config block: {e}") from e
    store = ParameterStore()
    count = r.u32()
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        # copy: frombuffer views the immutable payload; parameters must stay
        # writable for in-place optimizer updates
        values = np.frombuffer(r.take(4 * n_items), dtype="<f4").reshape(shape).copy()
        store.add(name, values)
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return store, config
