"""
Checkpoint persistence for sentence classifiers.

File layout:
- 8-byte magic
- little-endian uint32 header length
- UTF-8 JSON header (sorted keys, compact separators)
- raw little-endian float32 parameter arrays in header order

The header carries the format version, architecture id and config, the
vocabulary token list, every parameter's name, shape and byte offset,
free-form training metadata and a CRC32 of the array payload.
"""
import json
import logging
import struct
import zlib
from typing import Dict, Optional

import numpy as np
from pydantic import ValidationError

from app.classifiers import MODEL_CLASSES, SentenceClassifier, build_classifier
from app.error_handling import (
    ArchitectureMismatchError,
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    DataError,
)
from app.text_processing import EmbeddingMatrix, Vocabulary

logger = logging.getLogger(__name__)

MAGIC = b'RPLYSENT'
FORMAT_VERSION = 1
PARAM_DTYPE = np.dtype('<f4')
_LENGTH = struct.Struct('<I')


def _encode_header(header: Dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(',', ':'), ensure_ascii=True).encode('utf-8')


def checkpoint_bytes(model: SentenceClassifier) -> bytes:
    """Serialize a model to the checkpoint byte layout"""
    entries = []
    chunks = []
    offset = 0
    for param in model.parameters():
        raw = np.ascontiguousarray(param.data, dtype=PARAM_DTYPE).tobytes()
        entries.append({'name': param.name, 'shape': list(param.shape), 'offset': offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b''.join(chunks)

    header = {
        'version': FORMAT_VERSION,
        'architecture': model.architecture,
        'config': model.config.model_dump(mode='json'),
        'vocabulary': list(model.vocab.index_to_token),
        'params': entries,
        'metadata': model.metadata,
        'payload_size': len(payload),
        'crc32': zlib.crc32(payload) & 0xFFFFFFFF,
    }
    header_bytes = _encode_header(header)
    return MAGIC + _LENGTH.pack(len(header_bytes)) + header_bytes + payload


def save_checkpoint(model: SentenceClassifier, path):
    """Write a model checkpoint"""
    data = checkpoint_bytes(model)
    try:
        with open(path, 'wb') as handle:
            handle.write(data)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}")
    logger.info(f"Saved {model.architecture} checkpoint ({len(data)} bytes) to {path}")


def _parse(data: bytes):
    prefix = len(MAGIC) + _LENGTH.size
    if len(data) < prefix or data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic bytes)")
    (header_length,) = _LENGTH.unpack_from(data, len(MAGIC))
    if len(data) < prefix + header_length:
        raise CorruptCheckpointError("checkpoint header is truncated")
    try:
        header = json.loads(data[prefix:prefix + header_length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptCheckpointError("checkpoint header is not valid JSON")
    if not isinstance(header, dict):
        raise CorruptCheckpointError("checkpoint header is not an object")

    version = header.get('version')
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION)

    required = ('architecture', 'config', 'vocabulary', 'params', 'metadata', 'payload_size', 'crc32')
    missing = [key for key in required if key not in header]
    if missing:
        raise CorruptCheckpointError(f"checkpoint header lacks {', '.join(missing)}")

    payload = data[prefix + header_length:]
    if len(payload) != header['payload_size']:
        raise CorruptCheckpointError(
            f"checkpoint payload has {len(payload)} bytes, header declares {header['payload_size']}"
        )
    if zlib.crc32(payload) & 0xFFFFFFFF != header['crc32']:
        raise CorruptCheckpointError("checkpoint payload checksum mismatch")
    return header, payload


def load_checkpoint(path, expected_architecture: Optional[str] = None) -> SentenceClassifier:
    """
    Read a checkpoint and rebuild its model.

    Args:
        path: Checkpoint file
        expected_architecture: Raise ArchitectureMismatchError if the file holds another model

    Returns:
        Model with parameters, config, vocabulary and metadata restored
    """
    try:
        with open(path, 'rb') as handle:
            data = handle.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    header, payload = _parse(data)
    architecture = header['architecture']
    if expected_architecture is not None and architecture != expected_architecture:
        raise ArchitectureMismatchError(architecture, expected_architecture)
    if architecture not in MODEL_CLASSES:
        raise CorruptCheckpointError(f"unknown architecture '{architecture}'")

    try:
        vocab = Vocabulary.from_tokens(header['vocabulary'])
    except (DataError, TypeError) as e:
        raise CorruptCheckpointError(f"checkpoint vocabulary is invalid: {e}")

    config_values = header['config']
    embed_dim = config_values.get('embed_dim')
    if not isinstance(embed_dim, int) or embed_dim <= 0:
        raise CorruptCheckpointError("checkpoint config lacks a valid embed_dim")
    placeholder = EmbeddingMatrix(values=np.zeros((vocab.size, embed_dim), dtype=np.float32), dim=embed_dim)
    try:
        model = build_classifier(architecture, config_values, vocab, embeddings=placeholder,
                                 metadata=header['metadata'])
    except (DataError, ValidationError) as e:
        raise CorruptCheckpointError(f"checkpoint config is invalid: {e}")

    params = model.named_parameters()
    entries = {entry['name']: entry for entry in header['params']}
    if set(entries) != set(params) or len(entries) != len(header['params']):
        raise CorruptCheckpointError("checkpoint parameter names do not match the architecture")

    for name, param in params.items():
        entry = entries[name]
        shape = tuple(entry['shape'])
        if shape != param.shape:
            raise CheckpointShapeError(name, shape, param.shape)
        count = int(np.prod(shape, dtype=np.int64))
        start = entry['offset']
        end = start + count * PARAM_DTYPE.itemsize
        if start < 0 or end > len(payload):
            raise CorruptCheckpointError(f"parameter {name} lies outside the payload")
        values = np.frombuffer(payload, dtype=PARAM_DTYPE, count=count, offset=start).reshape(shape)
        param.data = values.astype(param.dtype)
        param.grad = np.zeros_like(param.data)

    logger.info(f"Loaded {architecture} checkpoint from {path} ({len(params)} parameters, vocab {vocab.size})")
    return model
