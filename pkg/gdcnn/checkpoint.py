"""
Binary checkpoint format (little-endian):

    "GDCN" | version u8 = 1
    config: input_size u32, conv_filters 4 x u32, head u8 (0 dense, 1 gap),
            dense_hidden u32, dropout_rate f32, num_classes u32
    per tensor: name_len u16, UTF-8 name, rank u8, rank x u32 dims, numel x f32
    "ENDGDCNN"
"""

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .logger import setup_logger
from .model import ModelConfig, Parameters, param_shapes

logger = setup_logger(__name__)

MAGIC = b"GDCN"
VERSION = 1
SENTINEL = b"ENDGDCNN"
HEADS = ("dense", "gap")
_CONFIG = struct.Struct("<I4IBIfI")


def encode(params: Parameters, config: ModelConfig) -> bytes:
    expected = param_shapes(config)
    if list(params) != list(expected):
        raise CheckpointFormatError(f"parameter names {list(params)} do not match config {list(expected)}")

    chunks = [MAGIC, bytes([VERSION]), _CONFIG.pack(
        config.input_size, *config.conv_filters, HEADS.index(config.head),
        config.dense_hidden, config.dropout_rate, config.num_classes)]
    for name, values in params.items():
        if values.shape != expected[name]:
            raise CheckpointFormatError(f"{name}: shape {values.shape} disagrees with config {expected[name]}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{values.ndim}I", values.ndim, *values.shape))
        chunks.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    chunks.append(SENTINEL)
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint at byte {self.offset} (needed {n} more)")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> tuple[Parameters, ModelConfig]:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("bad magic bytes, not a GDCN checkpoint")
    version = reader.take(1)[0]
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")

    input_size, f1, f2, f3, f4, head, dense_hidden, dropout, num_classes = reader.unpack(_CONFIG.format)
    if head >= len(HEADS):
        raise CheckpointFormatError(f"unknown head code {head}")
    try:
        config = ModelConfig(input_size=input_size, conv_filters=(f1, f2, f3, f4), head=HEADS[head],
                             dense_hidden=dense_hidden, dropout_rate=dropout, num_classes=num_classes)
    except ValueError as e:
        raise CheckpointFormatError(f"invalid embedded config: {e}") from e

    params: Parameters = {}
    for name, shape in param_shapes(config).items():
        (name_len,) = reader.unpack("<H")
        stored = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I")
        if stored != name or dims != shape:
            raise CheckpointFormatError(f"tensor {stored} {dims} disagrees with config ({name} {shape})")
        numel = int(np.prod(dims))
        values = np.frombuffer(reader.take(4 * numel), dtype="<f4")
        params[name] = values.astype(np.float32).reshape(dims)

    if data[reader.offset:] != SENTINEL:
        raise CheckpointFormatError("missing end sentinel (truncated or trailing data)")
    return params, config


def save_checkpoint(params: Parameters, config: ModelConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(params, config))
    logger.info(f"Checkpoint saved to {path}")
    return path


def load_checkpoint(path) -> tuple[Parameters, ModelConfig]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise CheckpointFormatError(f"checkpoint not found: {path}") from e
    params, config = decode(data)
    logger.info(f"Checkpoint loaded from {path} ({config.head} head)")
    return params, config
