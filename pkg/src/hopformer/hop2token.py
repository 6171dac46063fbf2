"""Offline construction of per-node hop token sequences and their disk cache.

The cache is hop-major on disk (``(K+1, n, d)``, the order propagation
produces it) and is served node-major: :meth:`TokenTensor.gather` and
:meth:`TokenStore.gather` return ``(b, K+1, d)`` blocks for a set of nodes.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _io
from .errors import CacheError, ShapeError, ValidationError
from .graph import NormalizedAdjacency, spmm

TOKEN_MAGIC = b"HOPTOKEN"
TOKEN_VERSION = 1
# caches above this size are memory-mapped rather than loaded
RESIDENT_LIMIT_BYTES = 256 << 20

_DTYPES = {"<f4": np.float32, "<f8": np.float64}


@dataclass(frozen=True, eq=False)
class TokenTensor:
    """Node-major token sequences, ``data[v, k] = (A_hat^k X')[v]``."""

    data: np.ndarray

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def K(self):
        return self.data.shape[1] - 1

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def node_ids(self):
        return np.arange(self.n)

    def gather(self, ids):
        return self.data[np.asarray(ids)]

    def astype(self, dtype):
        return TokenTensor(self.data.astype(dtype))


def hop2token(a: NormalizedAdjacency, x_prime, K: int, dtype=np.float64,
              canonical=False) -> TokenTensor:
    """Stack ``A_hat^k X'`` for ``k = 0..K`` into an ``(n, K+1, d')`` tensor.

    Propagation runs in float64 with ``K`` sparse products; the result is
    stored in ``dtype``. The loop writes hop ``k`` and then propagates, and
    the last product (which would only be discarded) is skipped.
    ``canonical`` selects the label-independent summation order of
    :func:`~hopformer.graph.spmm`.
    """
    if K < 0:
        raise ValidationError(f"hop count K must be >= 0, got {K}")
    x = np.asarray(x_prime, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != a.n:
        raise ShapeError(f"hop2token: features {x.shape} do not match n={a.n}")
    out = np.empty((a.n, K + 1, x.shape[1]), dtype=dtype)
    for k in range(K + 1):
        out[:, k, :] = x
        if k < K:
            x = spmm(a, x, canonical)
    return TokenTensor(out)


def save_tokens(t: TokenTensor, path):
    """Write ``t`` hop-major with a versioned header and SHA-256 trailer."""
    code = np.dtype(t.data.dtype).newbyteorder("<").str
    if code not in _DTYPES:
        raise ValidationError(f"unsupported token dtype {t.data.dtype}")
    header = {"n": t.n, "K": t.K, "width": t.width, "dtype": code, "layout": "hop-major"}
    hops = (t.data[:, k, :] for k in range(t.K + 1))
    _io.write_container(path, TOKEN_MAGIC, TOKEN_VERSION, header, hops)


def _open(path):
    header, offset = _io.read_header(path, TOKEN_MAGIC, TOKEN_VERSION, "token cache")
    try:
        n, K, width = int(header["n"]), int(header["K"]), int(header["width"])
        dtype = _DTYPES[header["dtype"]]
    except (KeyError, TypeError, ValueError):
        raise CacheError(f"{path}: token cache header is incomplete") from None
    nbytes = (K + 1) * n * width * np.dtype(dtype).itemsize
    _io.verify(path, TOKEN_MAGIC, offset, nbytes)
    return n, K, width, dtype, offset


def load_tokens(path) -> TokenTensor:
    """Load a whole token cache into memory, node-major."""
    n, K, width, dtype, offset = _open(path)
    raw = np.fromfile(path, dtype=np.dtype(dtype).newbyteorder("<"),
                      count=(K + 1) * n * width, offset=offset)
    data = raw.reshape(K + 1, n, width).transpose(1, 0, 2)
    return TokenTensor(np.ascontiguousarray(data, dtype=dtype))


class TokenStore:
    """Read-only token cache that gathers node rows straight from disk.

    Peak memory while serving batches is proportional to the batch, not to
    the number of nodes in the graph.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        n, K, width, dtype, offset = _open(path)
        self._mm = np.memmap(self.path, dtype=np.dtype(dtype).newbyteorder("<"), mode="r",
                             offset=offset, shape=(K + 1, n, width))
        self.n, self.K, self.width, self.dtype = n, K, width, dtype

    def gather(self, ids):
        ids = np.asarray(ids)
        order = np.argsort(ids, kind="stable")
        block = np.empty((ids.shape[0], self.K + 1, self.width), dtype=self.dtype)
        sorted_ids = ids[order]
        for k in range(self.K + 1):
            block[order, k, :] = self._mm[k, sorted_ids, :]
        return block


def open_tokens(path, resident_limit=RESIDENT_LIMIT_BYTES):
    """Return a resident :class:`TokenTensor` for small caches, else a :class:`TokenStore`."""
    if os.path.getsize(path) <= resident_limit:
        return load_tokens(path)
    return TokenStore(path)
