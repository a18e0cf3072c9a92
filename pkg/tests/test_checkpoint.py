import numpy as np
import pytest

from gdcnn.checkpoint import MAGIC, SENTINEL, decode, encode, load_checkpoint, save_checkpoint
from gdcnn.errors import CheckpointFormatError
from gdcnn.model import ModelConfig, init_params


@pytest.fixture(params=["gap", "dense"])
def config(request):
    return ModelConfig(input_size=46, conv_filters=(2, 3, 4, 5), head=request.param, dense_hidden=7, dropout_rate=0.8)


def test_save_load_save_identical(config, tmp_path):
    params = init_params(config, seed=3)
    first = save_checkpoint(params, config, tmp_path / "a.gdcn")
    loaded, loaded_config = load_checkpoint(first)
    second = save_checkpoint(loaded, loaded_config, tmp_path / "b.gdcn")

    assert loaded_config == config
    assert first.read_bytes() == second.read_bytes()
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])


def test_file_size_accounting(config):
    params = init_params(config, seed=0)
    header = len(MAGIC) + 1 + 33
    tensors = sum(2 + len(name) + 1 + 4 * values.ndim + 4 * values.size for name, values in params.items())
    assert len(encode(params, config)) == header + tensors + len(SENTINEL)


def test_bad_magic(config):
    data = bytearray(encode(init_params(config), config))
    data[0:4] = b"XXXX"
    with pytest.raises(CheckpointFormatError, match="magic"):
        decode(bytes(data))


def test_bad_version(config):
    data = bytearray(encode(init_params(config), config))
    data[4] = 9
    with pytest.raises(CheckpointFormatError, match="version"):
        decode(bytes(data))


def test_truncated(config):
    data = encode(init_params(config), config)
    with pytest.raises(CheckpointFormatError):
        decode(data[:len(data) // 2])
    with pytest.raises(CheckpointFormatError, match="sentinel"):
        decode(data[:-1])


def test_trailing_bytes(config):
    with pytest.raises(CheckpointFormatError):
        decode(encode(init_params(config), config) + b"\x00")


def test_shape_disagreement(config):
    params = init_params(config)
    params["conv1.weight"] = np.zeros((9, 1, 3, 3), np.float32)
    with pytest.raises(CheckpointFormatError, match="conv1.weight"):
        encode(params, config)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointFormatError, match="not found"):
        load_checkpoint(tmp_path / "absent.gdcn")


@pytest.mark.parametrize("rate", [0.123456789, 0.8, 1e-9, 0.99999999])
def test_dropout_rate_round_trip(rate):
    config = ModelConfig(input_size=46, conv_filters=(2, 2, 2, 2), dropout_rate=rate)
    assert 0.0 <= config.dropout_rate < 1.0
    params = init_params(config, seed=1)
    first = encode(params, config)
    loaded, loaded_config = decode(first)
    assert loaded_config == config
    assert encode(loaded, loaded_config) == first
