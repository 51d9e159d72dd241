"""Binary container shared by traces, datasets, and model checkpoints.

Layout (little-endian throughout, 64-bit floats in payloads):

    magic   4 bytes  b"MACD"
    version u16
    kind    u16      (1 = transition records, 2 = trajectory windows,
                      3 = checkpoint)
    meta_len u32, meta bytes (canonical JSON, sorted keys), meta crc32 u32
    n_blocks u32
    per block: name_len u16, name utf-8, payload_len u64, payload,
               payload crc32 u32

Bit-exact reproducibility is the point: identical inputs serialize to
identical bytes.
"""

from __future__ import annotations

import json
import struct
import zlib

MAGIC = b"MACD"
FORMAT_VERSION = 1

KIND_RECORDS = 1
KIND_WINDOWS = 2
KIND_CHECKPOINT = 3


class StorageError(Exception):
    """Base class for container read failures."""


class VersionError(StorageError):
    """Magic or format version does not match."""


class SchemaError(StorageError):
    """Container kind or meta contents do not match what the reader expects."""


class TruncatedError(StorageError):
    """File ends before a declared block does."""


class ChecksumError(StorageError):
    """Stored CRC-32 does not match the payload."""


def canonical_meta_bytes(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, kind: int, meta: dict, blocks: list[tuple[str, bytes]]) -> None:
    meta_bytes = canonical_meta_bytes(meta)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", FORMAT_VERSION, kind)
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", zlib.crc32(meta_bytes))
    out += struct.pack("<I", len(blocks))
    for name, payload in blocks:
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<Q", len(payload))
        out += payload
        out += struct.pack("<I", zlib.crc32(payload))
    with open(path, "wb") as f:
        f.write(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path, expect_kind: int | None = None):
    """Read and verify a container; returns (kind, meta, blocks dict)."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise VersionError(f"{path}: bad magic, not a MACD container")
    version, kind = r.unpack("<HH")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if expect_kind is not None and kind != expect_kind:
        raise SchemaError(f"{path}: container kind {kind}, expected {expect_kind}")
    (meta_len,) = r.unpack("<I")
    meta_bytes = r.take(meta_len)
    (meta_crc,) = r.unpack("<I")
    if zlib.crc32(meta_bytes) != meta_crc:
        raise ChecksumError(f"{path}: meta block checksum mismatch")
    meta = json.loads(meta_bytes.decode("utf-8"))
    (n_blocks,) = r.unpack("<I")
    blocks: dict[str, bytes] = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (payload_len,) = r.unpack("<Q")
        payload = r.take(payload_len)
        (crc,) = r.unpack("<I")
        if zlib.crc32(payload) != crc:
            raise ChecksumError(f"{path}: block '{name}' checksum mismatch")
        blocks[name] = payload
    return kind, meta, blocks
