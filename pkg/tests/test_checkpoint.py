import json
import struct

import numpy as np
import pytest

from app.checkpoint_service import MAGIC, checkpoint_bytes, load_checkpoint, save_checkpoint
from app.classifiers import BiLstmClassifier, CnnClassifier
from app.error_handling import (
    ArchitectureMismatchError,
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
)


# --- Fixtures --- #

@pytest.fixture
def bilstm(tiny_bilstm_config, small_vocab):
    model = BiLstmClassifier(tiny_bilstm_config, small_vocab, seed=8)
    model.metadata = {'stage': 'stage1', 'seed': 8, 'class_weights': {'negative': 1.0}}
    return model


@pytest.fixture
def cnn(tiny_cnn_config, small_vocab):
    return CnnClassifier(tiny_cnn_config, small_vocab, seed=8)


def _rewrite_header(path, mutate):
    data = path.read_bytes()
    prefix = len(MAGIC) + 4
    (length,) = struct.unpack_from('<I', data, len(MAGIC))
    header = json.loads(data[prefix:prefix + length])
    mutate(header)
    encoded = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    path.write_bytes(MAGIC + struct.pack('<I', len(encoded)) + encoded + data[prefix + length:])


# --- Round trip --- #

def test_round_trip_restores_everything(tmp_path, bilstm):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(bilstm, path)
    loaded = load_checkpoint(path)

    assert isinstance(loaded, BiLstmClassifier)
    assert loaded.config == bilstm.config
    assert loaded.vocab == bilstm.vocab
    assert loaded.metadata == bilstm.metadata
    for name, param in bilstm.named_parameters().items():
        assert np.array_equal(loaded.named_parameters()[name].data, param.data)
    assert np.array_equal(loaded.forward([2, 3, 4]), bilstm.forward([2, 3, 4]))


def test_save_load_save_is_byte_identical(tmp_path, bilstm, cnn):
    for model in (bilstm, cnn):
        path = tmp_path / f'{model.architecture}.ckpt'
        save_checkpoint(model, path)
        assert checkpoint_bytes(load_checkpoint(path)) == path.read_bytes()


def test_expected_architecture(tmp_path, cnn):
    path = tmp_path / 'cnn.ckpt'
    save_checkpoint(cnn, path)
    assert isinstance(load_checkpoint(path, expected_architecture='cnn'), CnnClassifier)
    with pytest.raises(ArchitectureMismatchError):
        load_checkpoint(path, expected_architecture='bilstm')


# --- Damaged files --- #

def test_truncated_file_is_corrupt(tmp_path, bilstm):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(bilstm, path)
    data = path.read_bytes()
    for cut in (4, 40, len(data) - 3):
        path.write_bytes(data[:cut])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)


def test_bad_magic_and_checksum(tmp_path, bilstm):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(bilstm, path)
    data = bytearray(path.read_bytes())

    path.write_bytes(b'NOTACKPT' + bytes(data[8:]))
    with pytest.raises(CorruptCheckpointError, match='magic'):
        load_checkpoint(path)

    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError, match='checksum'):
        load_checkpoint(path)


def test_unsupported_version(tmp_path, bilstm):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(bilstm, path)
    _rewrite_header(path, lambda header: header.update(version=2))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_shape_inconsistent_with_config(tmp_path, bilstm):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(bilstm, path)
    _rewrite_header(path, lambda header: header['config'].update(hidden_size=7))
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(path)


def test_invalid_vocabulary_is_corrupt(tmp_path, bilstm):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(bilstm, path)
    _rewrite_header(path, lambda header: header.update(vocabulary=['a', 'b']))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / 'absent.ckpt')
