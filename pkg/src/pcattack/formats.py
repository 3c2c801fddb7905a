"""Shared helpers and errors for the little-endian binary containers."""

import struct


class FormatError(ValueError):
    """Malformed binary file."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def require_magic(buf, magic, version):
    head = bytes(buf[:4])
    if len(head) < 4 and head == magic[: len(head)]:
        raise TruncatedFileError("file ends inside the magic number")
    if head != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {bytes(buf[:4])!r}")
    if len(buf) < 6:
        raise TruncatedFileError("file ends inside the header")
    (found,) = struct.unpack("<H", buf[4:6])
    if found != version:
        raise VersionMismatchError(f"unsupported version {found} (expected {version})")


def read_exact(buf, pos, n):
    if pos + n > len(buf):
        raise TruncatedFileError(f"need {n} bytes at offset {pos}, file has {len(buf)}")
    return buf[pos : pos + n]
