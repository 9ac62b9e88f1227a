"""Named parameter store and the little-endian checkpoint file format."""

import logging
import re
import struct
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Tuple, Union

import numpy as np

from .autodiff import Tensor
from .config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import FormatError, ParameterError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_NAME_PATTERN = re.compile(r"^[A-Za-z0-9_]+(\.[A-Za-z0-9_]+)*$")
_HEADER = struct.Struct("<4sII")


class ParamStore:
    """
    Dot-path named parameters (e.g. ``decoder.tf.lstm3.w_ih``).

    A parameter shared by several components is registered once and every
    component looks it up under that one name. Iteration is in lexicographic
    name order so that optimizer updates and serialization are deterministic.
    """

    def __init__(self):
        self._entries: Dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if not _NAME_PATTERN.match(name):
            raise ParameterError(f"invalid parameter name '{name}'")
        if name in self._entries:
            raise ParameterError(f"duplicate parameter name '{name}'")
        tensor = Tensor(data, requires_grad=True)
        self._entries[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise ParameterError(f"unknown parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> List[str]:
        return sorted(self._entries)

    def items(self) -> List[Tuple[str, Tensor]]:
        return [(name, self._entries[name]) for name in self.names()]

    def with_prefix(self, prefix: str) -> List[str]:
        return [name for name in self.names() if name.startswith(prefix)]

    def zero_grad(self) -> None:
        for tensor in self._entries.values():
            tensor.zero_grad()

    def size(self) -> int:
        return int(sum(t.data.size for t in self._entries.values()))

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, tensor in self.items():
            clone.add(name, tensor.data.copy())
        return clone

    def snapshot(self) -> "ParamStore":
        """Frozen copy without gradients, safe to share across inference workers."""
        frozen = ParamStore()
        for name, tensor in self.items():
            data = tensor.data.copy()
            data.setflags(write=False)
            entry = Tensor.__new__(Tensor)
            entry.data = data
            entry.requires_grad = False
            entry.grad = None
            entry._tape = None
            frozen._entries[name] = entry
        return frozen

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        missing = set(self._entries) ^ set(arrays)
        if missing:
            raise ParameterError(f"parameter set mismatch: {sorted(missing)}")
        for name, tensor in self._entries.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ParameterError(f"'{name}': expected shape {tensor.shape}, got {value.shape}")
            tensor.data = value.copy()
            tensor.zero_grad()

    def save(self, path: PathLike) -> None:
        write_tensor_file(path, ((name, t.data) for name, t in self.items()))
        logger.debug("saved %d parameters (%d values) to %s", len(self), self.size(), path)

    @classmethod
    def load(cls, path: PathLike) -> "ParamStore":
        arrays, _ = read_tensor_file(path)
        store = cls()
        for name in sorted(arrays):
            store.add(name, arrays[name])
        return store


# -----------------------------------------------------------------------------
# Binary tensor files
# -----------------------------------------------------------------------------
def write_tensor_file(
    path: PathLike,
    entries: Iterable[Tuple[str, np.ndarray]],
    trailer: bytes = b"",
) -> None:
    """
    Layout: magic "VADD", version u32, entry count u32, then per entry the
    UTF-8 name (u32 length prefix), rank u32, u64 extents and raw
    little-endian f64 data. ``trailer`` is appended verbatim.
    """
    body = bytearray()
    count = 0
    for name, array in entries:
        raw_name = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f8")
        body += struct.pack("<I", len(raw_name)) + raw_name
        body += struct.pack("<I", data.ndim)
        body += struct.pack(f"<{data.ndim}Q", *data.shape)
        body += data.tobytes()
        count += 1
    payload = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, count) + bytes(body) + trailer
    Path(path).write_bytes(payload)


def read_tensor_file(path: PathLike) -> Tuple[Dict[str, np.ndarray], bytes]:
    """Inverse of ``write_tensor_file``; returns the entries and any trailing bytes."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(str(path), "truncated header")
    magic, version, count = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(str(path), f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(str(path), f"unsupported version {version}")

    offset = _HEADER.size
    arrays: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}Q", raw, offset)
            offset += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * size > len(raw):
                raise FormatError(str(path), f"truncated data for '{name}'")
            data = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
            arrays[name] = data.astype(np.float64).reshape(shape)
            offset += 8 * size
    except struct.error:
        raise FormatError(str(path), "truncated entry table") from None
    except UnicodeDecodeError:
        raise FormatError(str(path), "invalid entry name") from None
    return arrays, raw[offset:]
