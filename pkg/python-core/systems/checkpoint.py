"""
SA3 - Checkpoint Files
Save and load named parameter tensors with explicit error handling

Layout (little-endian):
    b"SA3W"                      magic
    u32                          format version (1)
    u32 + bytes                  UTF-8 JSON metadata (sorted keys)
    u32                          tensor count
    per tensor:
        u16 + bytes              UTF-8 name
        u8                       rank
        u32 × rank               extents
        f64 × prod(extents)      values, row-major

Complexity Guarantees:
- Save operation: O(n) where n = total parameter count
- Load operation: O(n) where n = file size
- All operations return Result types
"""

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np

from core.parameters import ParameterStore
from standards.formal_specs import verify_complexity
from standards.result_types import Fault, FaultKind, Ok, Result, fault

logger = logging.getLogger(__name__)

MAGIC = b"SA3W"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    """Loaded checkpoint: metadata plus parameter arrays in file order."""
    metadata: Dict[str, Any]
    state: "OrderedDict[str, np.ndarray]"

    def shapes(self) -> Dict[str, tuple]:
        return {name: array.shape for name, array in self.state.items()}


def encode_checkpoint(state: Mapping[str, np.ndarray], metadata: Mapping[str, Any]) -> bytes:
    meta = json.dumps(dict(metadata), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(state))]
    for name, array in state.items():
        array = np.ascontiguousarray(array, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._offset = 0

    def take(self, count: int) -> bytes:
        end = self._offset + count
        if end > len(self._data):
            raise EOFError(f"needed {count} bytes at offset {self._offset}, file has {len(self._data)}")
        chunk = self._data[self._offset:end]
        self._offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self._offset == len(self._data)


def decode_checkpoint(data: bytes, path: str = "<memory>") -> Result[Checkpoint, Fault]:
    try:
        reader = _Reader(data)
        if reader.take(4) != MAGIC:
            return fault(FaultKind.PARSE, "not a checkpoint (bad magic)", path)
        version, meta_len = reader.unpack("<II")
        if version != FORMAT_VERSION:
            return fault(FaultKind.PARSE, f"unsupported checkpoint version {version}", path)
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
        (count,) = reader.unpack("<I")
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            (name_len,) = reader.unpack("<H")
            name = reader.take(name_len).decode("utf-8")
            (rank,) = reader.unpack("<B")
            shape = reader.unpack(f"<{rank}I") if rank else ()
            size = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
            state[name] = values.reshape(shape)
        if not reader.exhausted:
            return fault(FaultKind.PARSE, "trailing bytes after the last tensor", path)
        return Ok(Checkpoint(metadata, state))
    except EOFError as e:
        return fault(FaultKind.PARSE, f"truncated checkpoint: {e}", path)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        return fault(FaultKind.PARSE, f"corrupt checkpoint metadata: {e}", path)


@verify_complexity(time="O(n)", space="O(n)", description="n = total parameter count")
def save_checkpoint(path: Union[str, Path], store: ParameterStore,
                    metadata: Mapping[str, Any]) -> Result[Path, Fault]:
    """
    Write every parameter of `store` in store order.

    Returns:
        Success[Path]: file written
        Failure[Fault]: IO fault
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(encode_checkpoint(store.state(), metadata))
    except OSError as e:
        return fault(FaultKind.IO, f"cannot write checkpoint: {e}", str(target))
    logger.info("checkpoint saved: %s (%d tensors)", target, len(store))
    return Ok(target)


@verify_complexity(time="O(n)", space="O(n)", description="n = file size")
def load_checkpoint(path: Union[str, Path]) -> Result[Checkpoint, Fault]:
    """
    Returns:
        Success[Checkpoint]
        Failure[Fault]: MISSING_ASSET, IO or PARSE
    """
    source = Path(path)
    if not source.is_file():
        return fault(FaultKind.MISSING_ASSET, "checkpoint file not found", str(source))
    try:
        data = source.read_bytes()
    except OSError as e:
        return fault(FaultKind.IO, f"cannot read checkpoint: {e}", str(source))
    return decode_checkpoint(data, str(source))


def restore_into(store: ParameterStore, checkpoint: Checkpoint) -> Result[ParameterStore, Fault]:
    """Copy checkpoint values into a store built for the same architecture."""
    expected = store.shapes()
    found = checkpoint.shapes()
    if expected != found:
        missing = sorted(set(expected) - set(found))
        extra = sorted(set(found) - set(expected))
        wrong = sorted(n for n in set(expected) & set(found) if expected[n] != found[n])
        return fault(FaultKind.SHAPE_MISMATCH,
                     f"checkpoint does not match the model: missing {missing}, unexpected {extra}, "
                     f"wrong shape {wrong}")
    store.load_state(checkpoint.state)
    return Ok(store)
