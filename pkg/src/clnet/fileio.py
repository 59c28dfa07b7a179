"""Shared on-disk container: JSON header line, raw payload, CRC-32 trailer.

Layout::

    {"format": ..., "version": 1, ...}\\n   <- UTF-8, one line, sorted keys
    <payload bytes>                         <- little-endian float32 etc.
    <uint32 LE>                             <- zlib.crc32(payload)
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Callable

__all__ = [
    "FormatError",
    "MalformedHeaderError",
    "TruncatedPayloadError",
    "ChecksumError",
    "write_container",
    "read_container",
]

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Base class for unreadable artifact files."""


class MalformedHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def _header_line(header: dict) -> bytes:
    return (json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def write_container(path, header: dict, payload: bytes) -> None:
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(_header_line(header))
        f.write(payload)
        f.write(struct.pack("<I", crc))


def read_container(
    path, kind: str, payload_size: Callable[[dict], int] | None = None
) -> tuple[dict, bytes]:
    """Read and verify a container of format ``kind``.

    ``payload_size`` maps the parsed header to the expected payload length in
    bytes; when given, short files raise :class:`TruncatedPayloadError` before
    the checksum is consulted.
    """
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise MalformedHeaderError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise MalformedHeaderError(f"{path}: header is not valid JSON ({err})") from None
    if not isinstance(header, dict) or header.get("format") != kind:
        raise MalformedHeaderError(f"{path}: not a {kind} file")
    if header.get("version") != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {header.get('version')!r}")
    body = raw[nl + 1 :]
    if payload_size is not None:
        try:
            expected = payload_size(header)
        except (KeyError, TypeError, ValueError) as err:
            raise MalformedHeaderError(f"{path}: incomplete header ({err})") from None
        if len(body) < expected + 4:
            raise TruncatedPayloadError(f"{path}: payload has {max(len(body) - 4, 0)} bytes, expected {expected}")
        if len(body) > expected + 4:
            raise MalformedHeaderError(f"{path}: {len(body) - expected - 4} trailing bytes after payload")
    elif len(body) < 4:
        raise TruncatedPayloadError(f"{path}: missing checksum trailer")
    payload, trailer = body[:-4], body[-4:]
    (crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    return header, payload
