import struct

import numpy as np
import pytest

from fkbench.exceptions import FormatError
from fkbench.protocol import FkbCodec, codec
from fkbench.types import Dataset


def _dataset():
    features = np.array([[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]], dtype=np.float64)
    return Dataset(features=features, labels=np.array([0, 1]), num_classes=2, name="pair")


def test_encode_layout():
    data = codec.encode(_dataset())
    magic, n, d, c = struct.unpack_from("<4sIII", data, 0)
    assert (magic, n, d, c) == (b"FKB1", 2, 3, 2)
    assert len(data) == 16 + 2 * 3 * 4 + 2 * 2
    assert struct.unpack_from("<f", data, 16)[0] == 0.5
    assert struct.unpack_from("<H", data, 16 + 24 + 2)[0] == 1


def test_decode_restores_records():
    decoded = codec.decode(codec.encode(_dataset()), name="pair")
    assert np.array_equal(decoded.features, _dataset().features)
    assert decoded.labels.tolist() == [0, 1]
    assert decoded.features.dtype == np.float64


def test_bad_magic():
    data = b"XKB1" + codec.encode(_dataset())[4:]
    with pytest.raises(FormatError, match="bad magic") as info:
        codec.decode(data)
    assert info.value.offset == 0


def test_truncated_header():
    with pytest.raises(FormatError, match="truncated header"):
        codec.decode(b"FKB1\x01")


def test_truncated_body():
    data = codec.encode(_dataset())
    with pytest.raises(FormatError, match="truncated body") as info:
        codec.decode(data[:-3])
    assert info.value.offset == len(data) - 3


def test_trailing_bytes():
    data = codec.encode(_dataset())
    with pytest.raises(FormatError, match="trailing") as info:
        codec.decode(data + b"\x00")
    assert info.value.offset == len(data)


def test_label_out_of_range_names_record():
    dataset = _dataset()
    dataset.labels = np.array([0, 2])
    data = codec.encode(dataset)
    with pytest.raises(FormatError, match=r"record 1: label 2 out of range \[0, 2\)") as info:
        codec.decode(data)
    assert info.value.offset == 16 + 24 + 2
    assert "byte offset 42" in info.value.message


def test_non_finite_feature():
    dataset = _dataset()
    dataset.features[1, 2] = np.inf
    with pytest.raises(FormatError, match="record 1: non-finite"):
        codec.decode(codec.encode(dataset))


def test_write_and_read(tmp_path):
    path = FkbCodec().write(_dataset(), tmp_path / "nested" / "pair.fkb")
    assert path.is_file()
    assert codec.read(path).name == "pair"
