"""Container format: round-trips and the three failure kinds."""

import struct

import numpy as np
import pytest

from macdmp import storage


def write_sample(path):
    meta = {"schema": "x/v1", "n": 2}
    blocks = [("a", np.arange(5, dtype="<f8").tobytes()), ("b", b"\x01\x02\x03")]
    storage.write_container(path, storage.KIND_RECORDS, meta, blocks)
    return meta, blocks


def test_round_trip(tmp_path):
    p = tmp_path / "x.macd"
    meta, blocks = write_sample(p)
    kind, meta2, blocks2 = storage.read_container(p)
    assert kind == storage.KIND_RECORDS
    assert meta2 == meta
    assert blocks2 == dict(blocks)


def test_write_is_bit_stable(tmp_path):
    p1, p2 = tmp_path / "a", tmp_path / "b"
    write_sample(p1)
    write_sample(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_is_version_error(tmp_path):
    p = tmp_path / "x.macd"
    write_sample(p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(storage.VersionError):
        storage.read_container(p)


def test_future_version_rejected(tmp_path):
    p = tmp_path / "x.macd"
    write_sample(p)
    raw = bytearray(p.read_bytes())
    raw[4:6] = struct.pack("<H", 99)
    p.write_bytes(bytes(raw))
    with pytest.raises(storage.VersionError):
        storage.read_container(p)


def test_kind_mismatch_is_schema_error(tmp_path):
    p = tmp_path / "x.macd"
    write_sample(p)
    with pytest.raises(storage.SchemaError):
        storage.read_container(p, expect_kind=storage.KIND_CHECKPOINT)


def test_corrupted_payload_byte_is_checksum_error(tmp_path):
    p = tmp_path / "x.macd"
    write_sample(p)
    raw = bytearray(p.read_bytes())
    # the file ends with block "b": 3 payload bytes then its crc32
    raw[-5] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(storage.ChecksumError):
        storage.read_container(p)


def test_truncated_file(tmp_path):
    p = tmp_path / "x.macd"
    write_sample(p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-6])
    with pytest.raises(storage.TruncatedError):
        storage.read_container(p)


def test_empty_block_list_is_valid(tmp_path):
    p = tmp_path / "x.macd"
    storage.write_container(p, storage.KIND_WINDOWS, {"n": 0}, [])
    kind, meta, blocks = storage.read_container(p, expect_kind=storage.KIND_WINDOWS)
    assert meta == {"n": 0}
    assert blocks == {}
