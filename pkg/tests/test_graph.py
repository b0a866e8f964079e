"""Graph construction and spectral oracles.

The 3-node-path eigenvalues come from the characteristic polynomial: with
off-diagonal a = 1/sqrt(2), det(L - x I) = (1-x)((1-x)^2 - 2 a^2), so
x in {0, 1, 2}.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillgraph.errors import GraphError
from skillgraph.features import NodeFeatureVector
from skillgraph.graph import (
    EdgePolicy,
    build_graph,
    decompose_laplacian,
    graph_from_dict,
    graph_to_dict,
    load_graph,
    normalized_laplacian,
    save_graph,
    spectral_embedding,
    symmetric_eigendecomposition,
    unnormalized_laplacian,
)
from conftest import random_adjacency, random_graph, union_find_components


def nfv(inst, phase, values, cid="c0"):
    return NodeFeatureVector(cid, inst, phase, np.asarray(values, dtype=float),
                             ("f0", "f1"))


class TestBuildGraph:
    def test_one_instrument_two_phases(self):
        g = build_graph(
            [nfv("t0", "calot", [1, 2]), nfv("t0", "dissection", [3, 4])],
            EdgePolicy(),
            phase_order=["calot", "dissection"],
        )
        assert g.n == 2
        assert np.array_equal(g.A, [[0, 1], [1, 0]])

    def test_two_instruments_one_phase(self):
        g = build_graph([nfv("t0", "calot", [1, 2]), nfv("t1", "calot", [3, 4])])
        assert g.n == 2
        assert np.array_equal(g.A, [[0, 1], [1, 0]])

    def test_two_by_two_grid(self):
        nodes = [
            nfv(inst, phase, [0.0, 0.0])
            for inst in ("t0", "t1")
            for phase in ("calot", "dissection")
        ]
        g = build_graph(nodes, EdgePolicy(), ["calot", "dissection"])
        assert g.n == 4
        # 2 temporal + 2 co-occurrence edges, every degree exactly 2
        assert np.isclose(np.triu(g.A).sum(), 4.0)
        assert np.allclose(g.A.sum(axis=1), 2.0)
        assert (np.count_nonzero(np.triu(g.A))) == 4

    def test_weights_respected(self):
        g = build_graph(
            [nfv("t0", "calot", [0, 0]), nfv("t0", "dissection", [0, 0])],
            EdgePolicy(temporal_weight=2.5),
            ["calot", "dissection"],
        )
        assert g.A[0, 1] == 2.5

    def test_nonconsecutive_phases_unlinked(self):
        nodes = [nfv("t0", p, [0, 0]) for p in ("a", "b", "c")]
        g = build_graph(nodes, EdgePolicy(), ["a", "b", "c"])
        assert g.A[0, 2] == 0.0
        assert g.A[0, 1] == 1.0 and g.A[1, 2] == 1.0

    def test_duplicate_node_key_rejected(self):
        with pytest.raises(GraphError, match="duplicate"):
            build_graph([nfv("t0", "calot", [1, 2]), nfv("t0", "calot", [3, 4])])

    def test_mixed_clips_rejected(self):
        with pytest.raises(GraphError, match="clips"):
            build_graph([nfv("t0", "calot", [1, 2]),
                         nfv("t1", "calot", [3, 4], cid="other")])


class TestNormalizedLaplacian:
    def test_k2(self):
        L = normalized_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(L, [[1, -1], [-1, 1]])
        w, _ = symmetric_eigendecomposition(L)
        assert np.allclose(w, [0, 2], atol=1e-12)

    def test_three_node_path(self):
        A = np.array([[0.0, 1, 0], [1, 0, 1], [0, 1, 0.0]])
        L = normalized_laplacian(A)
        r = 1 / np.sqrt(2)
        assert np.allclose(L, [[1, -r, 0], [-r, 1, -r], [0, -r, 1]])
        w, _ = symmetric_eigendecomposition(L)
        assert np.allclose(w, [0, 1, 2], atol=1e-9)

    def test_isolated_node_zero_row(self):
        A = np.zeros((3, 3))
        A[0, 1] = A[1, 0] = 1.0
        L = normalized_laplacian(A)
        assert np.allclose(L[2], 0) and np.allclose(L[:, 2], 0)
        w, _ = symmetric_eigendecomposition(L)
        assert np.allclose(np.sort(w), [0, 0, 2], atol=1e-12)

    def test_unnormalized_form(self):
        A = np.array([[0.0, 2, 0], [2, 0, 1], [0, 1, 0.0]])
        L = unnormalized_laplacian(A)
        assert np.allclose(L, np.diag([2, 3, 1]) - A)

    def test_rejects_asymmetric(self):
        A = np.array([[0.0, 1], [0, 0.0]])
        with pytest.raises(GraphError, match="symmetric"):
            normalized_laplacian(A)

    def test_rejects_negative(self):
        A = np.array([[0.0, -1], [-1, 0.0]])
        with pytest.raises(GraphError, match="non-negative"):
            normalized_laplacian(A)

    def test_permutation_equivariance_exact(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 10))
            A = random_adjacency(rng, n)
            P = np.eye(n)[rng.permutation(n)]
            left = normalized_laplacian(P @ A @ P.T)
            right = P @ normalized_laplacian(A) @ P.T
            assert np.array_equal(left, right)

    def test_eigenvalue_zero_multiplicity_matches_components(self, rng):
        for _ in range(40):
            n = int(rng.integers(2, 16))
            A = random_adjacency(rng, n, p=float(rng.uniform(0.1, 0.7)))
            w, _ = symmetric_eigendecomposition(normalized_laplacian(A))
            zeros = int(np.sum(np.abs(w) <= 1e-9))
            assert zeros == union_find_components(A)

    def test_connected_graph_smallest_eigenpair(self, rng):
        # lambda_1 = 0 with eigenvector proportional to D^{1/2} 1
        A = random_adjacency(rng, 6, p=1.0)
        d = A.sum(axis=1)
        w, V = symmetric_eigendecomposition(normalized_laplacian(A))
        assert abs(w[0]) <= 1e-9
        v = V[:, 0]
        expected = np.sqrt(d) / np.linalg.norm(np.sqrt(d))
        assert np.allclose(np.abs(v), expected, atol=1e-8)


class TestEigendecomposition:
    def test_identity(self):
        w, V = symmetric_eigendecomposition(np.eye(3))
        assert np.allclose(w, 1.0)
        assert np.allclose(V.T @ V, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        w, V = symmetric_eigendecomposition(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(w, [1, 2, 3])
        # axis eigenvectors, sign-fixed positive
        assert np.allclose(np.abs(V), np.eye(3)[:, [1, 2, 0]])
        assert V.max() > 0

    def test_k2_sign_convention(self):
        L = np.array([[1.0, -1.0], [-1.0, 1.0]])
        w, V = symmetric_eigendecomposition(L)
        r = 1 / np.sqrt(2)
        assert np.allclose(w, [0, 2], atol=1e-15)
        assert np.allclose(V[:, 0], [r, r])
        # equal magnitudes: lowest index becomes positive
        assert np.allclose(V[:, 1], [r, -r])

    def test_reconstruction_error_random(self, rng):
        for n in (2, 5, 16, 33, 64):
            M = rng.normal(size=(n, n))
            M = (M + M.T) / 2
            w, V = symmetric_eigendecomposition(M)
            rec = V @ np.diag(w) @ V.T
            rel = np.linalg.norm(M - rec) / np.linalg.norm(M)
            assert rel <= 1e-8
            assert np.allclose(V.T @ V, np.eye(n), atol=1e-9)

    def test_matches_numpy_eigenvalues(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 20))
            M = rng.normal(size=(n, n))
            M = (M + M.T) / 2
            w, _ = symmetric_eigendecomposition(M)
            assert np.allclose(w, np.linalg.eigvalsh(M), atol=1e-9)

    def test_eigenvector_equation(self, rng):
        M = rng.normal(size=(8, 8))
        M = (M + M.T) / 2
        w, V = symmetric_eigendecomposition(M)
        for i in range(8):
            assert np.allclose(M @ V[:, i], w[i] * V[:, i], atol=1e-9)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(GraphError, match="symmetric"):
            symmetric_eigendecomposition(np.array([[0.0, 1.0], [2.0, 0.0]]))

    def test_rejects_oversize(self):
        with pytest.raises(GraphError, match="maximum"):
            symmetric_eigendecomposition(np.eye(10), max_n=5)

    def test_deterministic(self, rng):
        M = rng.normal(size=(12, 12))
        M = (M + M.T) / 2
        w1, V1 = symmetric_eigendecomposition(M.copy())
        w2, V2 = symmetric_eigendecomposition(M.copy())
        assert np.array_equal(w1, w2) and np.array_equal(V1, V2)


class TestSpectralEmbedding:
    def test_k2_smallest(self):
        d = decompose_laplacian(np.array([[0.0, 1], [1, 0.0]]))
        H = spectral_embedding(d, 1)
        assert np.allclose(H.ravel(), [1 / np.sqrt(2)] * 2)

    def test_full_matrix(self, rng):
        A = random_adjacency(rng, 5, p=0.8)
        d = decompose_laplacian(A)
        assert np.array_equal(spectral_embedding(d, 5), d.eigenvectors)

    def test_clamped(self, rng):
        A = random_adjacency(rng, 3, p=1.0)
        d = decompose_laplacian(A)
        assert spectral_embedding(d, 10).shape == (3, 3)
        with pytest.raises(GraphError):
            spectral_embedding(d, 10, clamp=False)

    def test_k_below_one_rejected(self, rng):
        d = decompose_laplacian(random_adjacency(rng, 3, p=1.0))
        with pytest.raises(GraphError):
            spectral_embedding(d, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_eigenvalue_range_property(n, seed):
    rng = np.random.default_rng(seed)
    A = random_adjacency(rng, n, p=float(rng.uniform(0.2, 1.0)))
    w, _ = symmetric_eigendecomposition(normalized_laplacian(A))
    assert np.all(w >= -1e-9)
    assert np.all(w <= 2 + 1e-9)


def test_graph_json_round_trip(tmp_path, rng):
    g = random_graph(rng, 5, labels={"Overall": 4})
    d = graph_to_dict(g)
    assert set(d) == {"node_ids", "X", "A", "labels"}
    path = tmp_path / "c0.json"
    save_graph(g, path)
    back = load_graph(path)
    assert back.clip_id == "c0"
    assert back.node_ids == g.node_ids
    assert np.allclose(back.X, g.X)
    assert np.allclose(back.A, g.A)
    assert back.labels == g.labels
    # upper-triangle edge list carries i < j only
    assert all(i < j for i, j, _ in d["A"])


def test_graph_json_rejects_garbage():
    from skillgraph.errors import DataFormatError

    with pytest.raises(DataFormatError):
        graph_from_dict(
            {"node_ids": [["a", "p"], ["b", "p"]], "X": [1.0, 2.0, 3.0], "A": []}
        )
    with pytest.raises(DataFormatError):
        graph_from_dict({"node_ids": [["a", "p"]], "X": [1.0]})  # missing A
