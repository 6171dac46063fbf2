"""Laplacian eigenvector structural encoding.

Uses the symmetric normalized Laplacian ``L = I - A_hat``. Eigenvalues at or
below ``TRIVIAL_THRESHOLD`` (one per connected component) are skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.csgraph as csgraph

from . import _io
from .errors import CacheError, NumericalError, ShapeError, ValidationError
from .graph import NormalizedAdjacency, spmm

TRIVIAL_THRESHOLD = 1e-8
DENSE_LIMIT = 2000
DEFAULT_SE_DIM = 3

ENCODING_MAGIC = b"HOPENCOD"
ENCODING_VERSION = 1


@dataclass(frozen=True, eq=False)
class StructuralEncoding:
    U: np.ndarray
    eigenvalues: np.ndarray

    @property
    def s(self):
        return self.U.shape[1]

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, 0)), np.zeros(0))


def _fix_signs(U):
    for j in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, j]) > 1e-8)
        if nz.size and U[nz[0], j] < 0:
            U[:, j] = -U[:, j]
    return U


def _trivial_basis(a: NormalizedAdjacency):
    """Orthonormal basis of the null space of L: sqrt(degree) per component."""
    ncomp, comp = csgraph.connected_components(a.to_scipy(), directed=False)
    deg = np.diff(a.row_offsets) * 1.0
    sq = np.sqrt(deg)
    Q0 = np.zeros((a.n, ncomp))
    Q0[np.arange(a.n), comp] = sq
    Q0 /= np.linalg.norm(Q0, axis=0)
    return Q0


def laplacian_eigvecs(a: NormalizedAdjacency, s: int, *, dense_limit=DENSE_LIMIT,
                      tol=1e-8, max_iter=None, seed=0) -> StructuralEncoding:
    """Eigenvectors of ``I - A_hat`` for the ``s`` smallest non-trivial eigenvalues.

    Graphs with at most ``dense_limit`` nodes use a dense symmetric
    eigendecomposition; larger ones use block Lanczos with full
    reorthogonalization against the known null space. Columns are signed so
    that their first entry with magnitude above 1e-8 is positive.
    """
    if s < 0:
        raise ValidationError(f"encoding dimension must be >= 0, got {s}")
    if s == 0:
        return StructuralEncoding.empty(a.n)
    Q0 = _trivial_basis(a)
    available = a.n - Q0.shape[1]
    if available < 1:
        raise ValidationError("no non-trivial eigenvalues exist (graph has no edges)")
    if s > available:
        raise ValidationError(
            f"requested s={s} eigenvectors but only {available} non-trivial eigenvalues exist")
    if a.n <= dense_limit:
        vals, vecs = _dense_eigs(a, s)
    else:
        vals, vecs = _lanczos_eigs(a, s, Q0, tol=tol, max_iter=max_iter, seed=seed)
    return StructuralEncoding(_fix_signs(np.ascontiguousarray(vecs)), vals)


def _dense_eigs(a, s):
    L = np.eye(a.n) - a.to_dense()
    vals, vecs = np.linalg.eigh(L)
    keep = np.flatnonzero(vals > TRIVIAL_THRESHOLD)
    if keep.size < s:
        raise ValidationError(
            f"requested s={s} eigenvectors but only {keep.size} non-trivial eigenvalues exist")
    keep = keep[:s]
    return vals[keep], vecs[:, keep]


def _lanczos_eigs(a, s, Q0, *, tol, max_iter, seed):
    # Largest eigenvalues of A_hat on the complement of its eigenvalue-1 space
    # are the smallest non-trivial eigenvalues of L. Block size s captures
    # multiplicities up to s, which single-vector Lanczos would miss.
    n, p = a.n, s
    limit = n - Q0.shape[1]
    if max_iter is None:
        max_iter = max(1, math.ceil(10 * s * math.log(n)))
    rng = np.random.default_rng(seed)

    def deflate(W, basis):
        for _ in range(2):
            W -= Q0 @ (Q0.T @ W)
            if basis:
                B = np.hstack(basis)
                W -= B @ (B.T @ W)
        return W

    X = deflate(rng.standard_normal((n, p)), [])
    Q, _ = np.linalg.qr(X)
    blocks, diag, off = [Q], [], []
    vals = vecs = None
    for it in range(1, max_iter + 1):
        W = spmm(a, blocks[-1])
        Aj = blocks[-1].T @ W
        diag.append((Aj + Aj.T) / 2)
        W = deflate(W, blocks)
        Qn, R = np.linalg.qr(W)
        dim = len(blocks) * p
        exhausted = dim + p > limit or np.abs(np.diag(R)).min() < 1e-12
        if not (exhausted or it % 5 == 0 or it == max_iter):
            blocks.append(Qn)
            off.append(R)
            continue
        T = np.zeros((dim, dim))
        for j, D in enumerate(diag):
            T[j * p:(j + 1) * p, j * p:(j + 1) * p] = D
        for j, B in enumerate(off):
            T[(j + 1) * p:(j + 2) * p, j * p:(j + 1) * p] = B
            T[j * p:(j + 1) * p, (j + 1) * p:(j + 2) * p] = B.T
        theta, S = np.linalg.eigh(T)
        top = np.argsort(theta)[::-1][:s]
        resid = np.linalg.norm(R @ S[-p:, top], axis=0)
        if dim >= s and (resid.max() <= tol or exhausted):
            order = top[np.argsort(1.0 - theta[top], kind="stable")]
            basis = np.hstack(blocks)
            vecs = basis @ S[:, order]
            vecs /= np.linalg.norm(vecs, axis=0)
            vals = 1.0 - theta[order]
            break
        blocks.append(Qn)
        off.append(R)
    if vals is None:
        raise NumericalError(
            f"Lanczos did not converge to tol={tol:g} after {max_iter} iterations")
    if (vals <= TRIVIAL_THRESHOLD).any():
        raise NumericalError("Lanczos returned a trivial eigenvalue; graph may be disconnected "
                             "in a way the deflation missed")
    return vals, vecs


def concat_features(x, enc: StructuralEncoding):
    """Return ``[x | U]``; columns of ``x`` come first, unnormalized."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != enc.U.shape[0]:
        raise ShapeError(f"concat_features: features {x.shape} vs encoding {enc.U.shape}")
    if enc.s == 0:
        return x.copy()
    return np.concatenate([x, enc.U.astype(x.dtype, copy=False)], axis=1)


def save_encoding(enc: StructuralEncoding, path):
    n, s = enc.U.shape
    _io.write_container(path, ENCODING_MAGIC, ENCODING_VERSION, {"n": n, "s": s, "dtype": "<f8"},
                        [enc.eigenvalues.astype("<f8"), enc.U.astype("<f8")])


def load_encoding(path) -> StructuralEncoding:
    header, offset = _io.read_header(path, ENCODING_MAGIC, ENCODING_VERSION, "encoding cache")
    try:
        n, s = int(header["n"]), int(header["s"])
    except (KeyError, TypeError, ValueError):
        raise CacheError(f"{path}: encoding header missing n/s") from None
    _io.verify(path, ENCODING_MAGIC, offset, 8 * (s + n * s))
    raw = np.fromfile(path, dtype="<f8", count=s + n * s, offset=offset)
    return StructuralEncoding(raw[s:].reshape(n, s).copy(), raw[:s].copy())
