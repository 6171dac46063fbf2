"""Versioned binary containers with a JSON header and a SHA-256 trailer.

Layout: 8-byte magic, ``<I`` version, ``<Q`` header length, UTF-8 JSON
header, raw little-endian payload, then the 32-byte SHA-256 digest of
header + payload.
"""
import hashlib
import json
import os
import struct

import numpy as np

from .errors import CacheError

_PREFIX = struct.Struct("<IQ")
_DIGEST = 32
_CHUNK = 1 << 22


def write_container(path, magic, version, header, arrays):
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    h = hashlib.sha256(head)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(_PREFIX.pack(version, len(head)))
        fh.write(head)
        for arr in arrays:
            arr = np.ascontiguousarray(arr)
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            buf = memoryview(arr.reshape(-1)).cast("B")
            h.update(buf)
            fh.write(buf)
        fh.write(h.digest())
    os.replace(tmp, path)


def read_header(path, magic, version, what):
    """Return ``(header, payload_offset)`` after checking magic and version."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CacheError(f"cannot open {what} {path}: {exc.strerror}") from None
    with fh:
        if fh.read(len(magic)) != magic:
            raise CacheError(f"{path}: not a {what}")
        raw = fh.read(_PREFIX.size)
        if len(raw) != _PREFIX.size:
            raise CacheError(f"{path}: checksum failure, file truncated in header")
        found, hlen = _PREFIX.unpack(raw)
        if found != version:
            raise CacheError(f"{path}: {what} version {found} unsupported (expected {version})")
        head = fh.read(hlen)
        if len(head) != hlen:
            raise CacheError(f"{path}: checksum failure, file truncated in header")
    try:
        header = json.loads(head)
    except ValueError:
        raise CacheError(f"{path}: corrupt {what} header") from None
    return header, len(magic) + _PREFIX.size + hlen


def verify(path, magic, payload_offset, payload_bytes):
    """Check total size and the SHA-256 trailer without loading the payload."""
    expected = payload_offset + payload_bytes + _DIGEST
    actual = os.path.getsize(path)
    if actual != expected:
        raise CacheError(
            f"{path}: checksum failure, size {actual} bytes but header implies {expected}")
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        fh.seek(len(magic) + _PREFIX.size)
        remaining = payload_offset - len(magic) - _PREFIX.size + payload_bytes
        while remaining:
            chunk = fh.read(min(_CHUNK, remaining))
            h.update(chunk)
            remaining -= len(chunk)
        if fh.read(_DIGEST) != h.digest():
            raise CacheError(f"{path}: checksum failure, payload digest mismatch")


def file_digest(path, algo="sha256"):
    h = hashlib.new(algo)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(_CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()


def git_blob_hash(path):
    """SHA-1 of ``blob <size>\\0<content>``, as ``git hash-object`` computes."""
    h = hashlib.sha1(f"blob {os.path.getsize(path)}\0".encode())
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(_CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()
