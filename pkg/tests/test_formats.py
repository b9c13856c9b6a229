import struct

import numpy as np
import pytest

from evifuse.formats import (
    FormatError,
    decode_tensor,
    encode_tensor,
    read_jsonl,
    read_tensor,
    write_jsonl,
    write_tensor,
)


def test_one_element_float_is_24_bytes(tmp_path):
    p = tmp_path / "t.evt"
    write_tensor(p, np.ones((1, 1, 1), dtype=np.float32))
    data = p.read_bytes()
    assert len(data) == 24
    assert data[:4] == b"EVT1" and data[4] == 0 and data[5] == 3 and data[6:8] == b"\0\0"
    assert struct.unpack("<3I", data[8:20]) == (1, 1, 1)


@pytest.mark.parametrize(
    "arr",
    [
        np.arange(24, dtype=np.float32).reshape(2, 3, 4),
        np.array([0, 1, 65535], dtype=np.uint16),
        np.zeros((0, 5), dtype=np.float32),
        np.float32(2.5).reshape(()),
    ],
)
def test_round_trip(tmp_path, arr):
    p = tmp_path / "r.evt"
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_float64_is_stored_as_float32():
    back = decode_tensor(encode_tensor(np.array([0.1, 0.2])))
    assert back.dtype == np.float32


def test_out_of_range_ints():
    with pytest.raises(FormatError):
        encode_tensor(np.array([70000]))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"EVT2" + b[4:],
        lambda b: b[:4] + b"\x07" + b[5:],
        lambda b: b[:6] + b"\x01" + b[7:],
        lambda b: b[:-1],
        lambda b: b + b"\0",
        lambda b: b[:10],
    ],
    ids=["magic", "dtype", "padding", "truncated", "trailing", "short-header"],
)
def test_corrupt_tensors_rejected(mutate):
    good = encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(FormatError):
        decode_tensor(mutate(good))


def test_element_count_overflow():
    header = b"EVT1" + bytes([0, 3, 0, 0]) + struct.pack("<3I", 2**20, 2**20, 2**20)
    with pytest.raises(FormatError, match="overflow"):
        decode_tensor(header)


def test_jsonl_round_trip_is_canonical(tmp_path):
    p = tmp_path / "a.jsonl"
    recs = [{"schema": "x", "b": 1, "a": [1, 2]}, {"schema": "x", "a": None}]
    write_jsonl(p, recs)
    assert p.read_text().splitlines()[0] == '{"a":[1,2],"b":1,"schema":"x"}'
    assert list(read_jsonl(p, "x")) == recs


def test_jsonl_schema_errors(tmp_path):
    p = tmp_path / "a.jsonl"
    with pytest.raises(FormatError):
        write_jsonl(p, [{"a": 1}])
    write_jsonl(p, [{"schema": "x"}])
    with pytest.raises(FormatError):
        list(read_jsonl(p, "y"))
    p.write_text("{not json\n")
    with pytest.raises(FormatError):
        list(read_jsonl(p))


def test_write_leaves_no_temp_files(tmp_path):
    write_tensor(tmp_path / "t.evt", np.zeros(3, dtype=np.float32))
    assert [f.name for f in tmp_path.iterdir()] == ["t.evt"]
