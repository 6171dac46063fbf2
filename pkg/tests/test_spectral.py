import numpy as np
import pytest
import scipy.linalg

from hopformer.errors import CacheError, ShapeError, ValidationError
from hopformer.graph import CsrGraph, normalize
from hopformer.spectral import (StructuralEncoding, concat_features, laplacian_eigvecs,
                                load_encoding, save_encoding)
from hopformer.synthetic import erdos_renyi, random_graph, sbm

from helpers import dense_normalized


def subspace_distance(U, V):
    """Sine of the largest principal angle between column spaces."""
    angles = scipy.linalg.subspace_angles(U, V)
    return float(np.sin(angles.max()))


def test_two_node_encoding(two_node):
    enc = laplacian_eigvecs(normalize(two_node), 1)
    assert enc.eigenvalues == pytest.approx([1.0], abs=1e-12)
    assert np.allclose(enc.U[:, 0], [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-12)


def test_empty_graph_has_no_nontrivial_eigenvalues():
    with pytest.raises(ValidationError, match="no non-trivial"):
        laplacian_eigvecs(normalize(CsrGraph.from_edges(3, [])), 1)


def test_s_too_large(path3):
    with pytest.raises(ValidationError, match="only 2"):
        laplacian_eigvecs(normalize(path3), 3)


def test_complete_graph_degenerate_pair():
    g = CsrGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    enc = laplacian_eigvecs(normalize(g), 2)
    L = np.eye(3) - dense_normalized(3, [(0, 1), (1, 2), (0, 2)])
    vals, vecs = np.linalg.eigh(L)
    assert enc.eigenvalues == pytest.approx(vals[1:], abs=1e-12)
    assert subspace_distance(enc.U, vecs[:, 1:]) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_encoding_invariants(seed):
    g = erdos_renyi(40, 0.15, 2, seed=seed)
    a = normalize(g)
    s = 4
    enc = laplacian_eigvecs(a, s)
    L = np.eye(g.n) - a.to_dense()
    assert np.allclose(np.linalg.norm(enc.U, axis=0), 1.0, atol=1e-8)
    for i in range(s):
        assert np.linalg.norm(L @ enc.U[:, i] - enc.eigenvalues[i] * enc.U[:, i]) <= 1e-6
    assert (np.diff(enc.eigenvalues) >= 0).all()
    assert (enc.eigenvalues > 1e-8).all()
    for j in range(s):
        col = enc.U[:, j]
        first = col[np.abs(col) > 1e-8][0]
        assert first > 0


def test_orthogonal_to_trivial_vector():
    g = sbm(120, 2, 0.2, 0.05, seed=3)
    a = normalize(g)
    enc = laplacian_eigvecs(a, 3)
    trivial = np.sqrt(np.diff(a.row_offsets))
    trivial /= np.linalg.norm(trivial)
    assert np.abs(trivial @ enc.U).max() <= 1e-6


def test_deterministic():
    a = normalize(erdos_renyi(50, 0.1, 1, seed=9))
    assert np.array_equal(laplacian_eigvecs(a, 3).U, laplacian_eigvecs(a, 3).U)


@pytest.mark.parametrize("graph", [
    lambda: erdos_renyi(80, 0.08, 1, seed=1),
    lambda: sbm(90, 3, 0.3, 0.02, seed=2),
    lambda: CsrGraph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]),
    lambda: CsrGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)]),
])
def test_lanczos_matches_dense(graph):
    g = graph()
    a = normalize(g)
    ncomp = np.count_nonzero(np.linalg.eigvalsh(np.eye(g.n) - a.to_dense()) <= 1e-8)
    s = min(3, g.n - ncomp)
    dense = laplacian_eigvecs(a, s)
    lanczos = laplacian_eigvecs(a, s, dense_limit=0)
    assert lanczos.eigenvalues == pytest.approx(dense.eigenvalues, abs=1e-8)
    L = np.eye(g.n) - a.to_dense()
    assert np.linalg.norm(L @ lanczos.U - lanczos.U * lanczos.eigenvalues, axis=0).max() <= 1e-6
    # ties make any basis of the eigenvalue cluster valid: check containment in it
    vals, vecs = np.linalg.eigh(L)
    cluster = vecs[:, (vals > 1e-8) & (vals <= lanczos.eigenvalues.max() + 1e-8)]
    outside = lanczos.U - cluster @ (cluster.T @ lanczos.U)
    assert np.linalg.norm(outside, axis=0).max() <= 1e-6


def test_lanczos_on_large_graph():
    g = random_graph(3000, avg_degree=6, d=1, seed=5)
    enc = laplacian_eigvecs(normalize(g), 3)
    assert enc.U.shape == (3000, 3)
    assert np.allclose(np.linalg.norm(enc.U, axis=0), 1.0, atol=1e-8)


def test_concat_features():
    x = np.array([[1.0, 2.0], [4.0, 5.0]])
    assert np.array_equal(concat_features(x, StructuralEncoding.empty(2)), x)
    enc = StructuralEncoding(np.array([[3.0], [6.0]]), np.array([0.5]))
    assert concat_features(x, enc)[0].tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ShapeError):
        concat_features(np.ones((3, 2)), enc)


def test_encoding_cache_round_trip(tmp_path, path3):
    enc = laplacian_eigvecs(normalize(path3), 2)
    save_encoding(enc, tmp_path / "enc.bin")
    back = load_encoding(tmp_path / "enc.bin")
    assert np.array_equal(back.U, enc.U) and np.array_equal(back.eigenvalues, enc.eigenvalues)
    raw = (tmp_path / "enc.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-40])
    with pytest.raises(CacheError, match="checksum"):
        load_encoding(tmp_path / "bad.bin")
