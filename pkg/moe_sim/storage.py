"""Binary storage for depth frames, datasets and estimator checkpoints."""

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    ContractViolation,
    DatasetError,
    UnsupportedVersionError,
)
from .types import DepthFrame

PathLike = Union[str, Path]

FRAME_MAGIC = b"MOED"
FRAME_HEADER = struct.Struct("<4sHHII")

DATASET_MAGIC = b"MOEDSET\x00"
DATASET_VERSION = 1
DATASET_HEADER = struct.Struct("<8sIQHH16sQII")
CRC = struct.Struct("<I")

CHECKPOINT_LENGTH = struct.Struct("<I")


def encode_frame(frame: DepthFrame) -> bytes:
    payload = np.ascontiguousarray(frame.depth, dtype="<u2").tobytes()
    height, width = frame.shape
    header = FRAME_HEADER.pack(FRAME_MAGIC, width, height, 0, zlib.crc32(payload))
    return header + payload


def decode_frame(blob: bytes) -> DepthFrame:
    if len(blob) < FRAME_HEADER.size:
        raise DatasetError("depth frame is truncated")
    magic, width, height, _, crc = FRAME_HEADER.unpack_from(blob)
    if magic != FRAME_MAGIC:
        raise BadMagicError(f"not a depth frame (magic {magic!r})")
    payload = blob[FRAME_HEADER.size :]
    if len(payload) != 2 * width * height:
        raise DatasetError("depth frame payload length does not match its header")
    if zlib.crc32(payload) != crc:
        raise ChecksumError("depth frame checksum mismatch")
    return DepthFrame(np.frombuffer(payload, dtype="<u2").reshape(height, width).copy())


def save_frame(frame: DepthFrame, path: PathLike) -> None:
    Path(path).write_bytes(encode_frame(frame))


def load_frame(path: PathLike) -> DepthFrame:
    return decode_frame(_read(path))


def record_dtype(height: int, width: int) -> np.dtype:
    return np.dtype(
        [
            ("episode", "<u4"),
            ("step", "<u4"),
            ("q", "<f8", (4,)),
            ("w", "<f8", (3,)),
            ("depth", "<u2", (height, width)),
        ]
    )


@dataclass
class DatasetFile:
    """Packed (masked depth, q, w) records plus the header describing how they were made."""

    height: int
    width: int
    wig: str
    seed: int
    records: Optional[np.ndarray] = None
    skipped: int = 0
    version: int = DATASET_VERSION

    def __post_init__(self):
        dtype = record_dtype(self.height, self.width)
        if self.records is None:
            self.records = np.zeros(0, dtype=dtype)
        elif self.records.dtype != dtype:
            raise ContractViolation("record layout does not match the frame size")
        if len(self.wig.encode("ascii")) > 16:
            raise ContractViolation("wig name longer than 16 bytes")

    @property
    def count(self) -> int:
        return int(self.records.shape[0])

    def __len__(self) -> int:
        return self.count

    def episode_ids(self) -> np.ndarray:
        return np.unique(self.records["episode"])

    def select(self, episodes: Iterable[int]) -> "DatasetFile":
        keep = np.isin(self.records["episode"], np.asarray(list(episodes), dtype="<u4"))
        return DatasetFile(
            self.height, self.width, self.wig, self.seed, self.records[keep].copy(), self.skipped
        )


def encode_dataset(dataset: DatasetFile) -> bytes:
    header = DATASET_HEADER.pack(
        DATASET_MAGIC,
        dataset.version,
        dataset.count,
        dataset.height,
        dataset.width,
        dataset.wig.encode("ascii").ljust(16, b"\x00"),
        dataset.seed,
        dataset.skipped,
        0,
    )
    body = header + np.ascontiguousarray(dataset.records).tobytes()
    return body + CRC.pack(zlib.crc32(body))


def decode_dataset(blob: bytes) -> DatasetFile:
    if len(blob) < DATASET_HEADER.size + CRC.size:
        raise DatasetError("dataset file is truncated")
    magic, version, count, height, width, wig, seed, skipped, _ = DATASET_HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise BadMagicError(f"not a moe-sim dataset (magic {magic!r})")
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(f"dataset version {version} is not supported")
    body, (crc,) = blob[: -CRC.size], CRC.unpack_from(blob, len(blob) - CRC.size)
    if zlib.crc32(body) != crc:
        raise ChecksumError("dataset checksum mismatch")
    dtype = record_dtype(height, width)
    payload = body[DATASET_HEADER.size :]
    if len(payload) != count * dtype.itemsize:
        raise DatasetError(f"header announces {count} records, payload holds a different amount")
    records = np.frombuffer(payload, dtype=dtype).copy()
    return DatasetFile(
        height, width, wig.rstrip(b"\x00").decode("ascii"), seed, records, skipped, version
    )


def write_dataset(dataset: DatasetFile, path: PathLike) -> None:
    Path(path).write_bytes(encode_dataset(dataset))


def read_dataset(path: PathLike) -> DatasetFile:
    return decode_dataset(_read(path))


def encode_checkpoint(header: dict, vector: np.ndarray) -> bytes:
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(vector, dtype="<f8").tobytes()
    return CHECKPOINT_LENGTH.pack(len(text)) + text + payload


def decode_checkpoint(blob: bytes) -> Tuple[dict, np.ndarray]:
    if len(blob) < CHECKPOINT_LENGTH.size:
        raise DatasetError("checkpoint is truncated")
    (length,) = CHECKPOINT_LENGTH.unpack_from(blob)
    start = CHECKPOINT_LENGTH.size
    try:
        header = json.loads(blob[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagicError(f"checkpoint header is not JSON: {exc}") from exc
    payload = blob[start + length :]
    if len(payload) % 8:
        raise DatasetError("checkpoint payload is not a whole number of float64 values")
    return header, np.frombuffer(payload, dtype="<f8").copy()


def _read(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DatasetError(f"file not found: {path}") from exc
