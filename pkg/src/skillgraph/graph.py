"""Graph construction and spectral machinery.

A clip's (instrument, phase) units become nodes. Same-instrument nodes in
consecutive phases are joined by temporal edges; distinct-instrument nodes in
the same phase by co-occurrence edges. The symmetric normalized Laplacian

    L = I - D^{-1/2} A D^{-1/2}

is the canonical spectral object; its eigenvalues lie in [0, 2]. Rows/columns
of isolated nodes are all zero (diagonal included) so that the multiplicity of
eigenvalue 0 equals the number of connected components. The unnormalized form
D - A is available for reproduction experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, GraphError
from .features import NodeFeatureVector

MAX_EIG_N = 512
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EdgePolicy:
    temporal_weight: float = 1.0
    cooccurrence_weight: float = 1.0

    def __post_init__(self):
        if self.temporal_weight < 0 or self.cooccurrence_weight < 0:
            raise GraphError("edge weights must be non-negative")
        if self.temporal_weight == 0 and self.cooccurrence_weight == 0:
            raise GraphError("at least one edge weight must be positive")


@dataclass
class SurgicalGraph:
    """Node feature matrix X (n x F), symmetric weighted adjacency A (n x n)."""

    clip_id: str
    node_ids: list[tuple[str, str]]  # (instrument_id, phase_name)
    X: np.ndarray
    A: np.ndarray
    labels: dict[str, int] | None = None

    @property
    def n(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class LaplacianDecomposition:
    L: np.ndarray
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns, sign-fixed


def check_adjacency(A: np.ndarray) -> None:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GraphError(f"adjacency must be square, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise GraphError("adjacency must be symmetric")
    if np.any(np.diag(A) != 0):
        raise GraphError("adjacency diagonal must be zero")
    if np.any(A < 0):
        raise GraphError("adjacency entries must be non-negative")


def build_graph(
    nodes: list[NodeFeatureVector],
    policy: EdgePolicy = EdgePolicy(),
    phase_order: list[str] | None = None,
    labels: dict[str, int] | None = None,
) -> SurgicalGraph:
    """Assemble a clip graph from its per-unit feature vectors.

    phase_order is the clip's temporal phase sequence; when omitted, sorted
    unique phase names are used (which matches ("calot", "dissection")).
    """
    if not nodes:
        raise GraphError("cannot build a graph from zero nodes")
    clip_ids = {v.clip_id for v in nodes}
    if len(clip_ids) != 1:
        raise GraphError(f"nodes span multiple clips: {sorted(clip_ids)}")
    if phase_order is None:
        phase_order = sorted({v.phase_name for v in nodes})
    phase_index = {p: k for k, p in enumerate(phase_order)}
    for v in nodes:
        if v.phase_name not in phase_index:
            raise GraphError(f"phase '{v.phase_name}' not in phase_order")

    ordered = sorted(nodes, key=lambda v: (v.instrument_id, phase_index[v.phase_name]))
    keys = [(v.instrument_id, v.phase_name) for v in ordered]
    if len(set(keys)) != len(keys):
        raise GraphError(f"duplicate (instrument, phase) node keys in {clip_ids.pop()}")

    n = len(ordered)
    X = np.stack([v.features for v in ordered])
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            inst_i, ph_i = keys[i]
            inst_j, ph_j = keys[j]
            w = 0.0
            if inst_i == inst_j and abs(phase_index[ph_i] - phase_index[ph_j]) == 1:
                w += policy.temporal_weight
            if inst_i != inst_j and ph_i == ph_j:
                w += policy.cooccurrence_weight
            A[i, j] = A[j, i] = w
    return SurgicalGraph(ordered[0].clip_id, keys, X, A, labels)


def _degrees(A: np.ndarray) -> np.ndarray:
    # Row entries summed in sorted order: the degree of a node then depends
    # only on the multiset of its weights, so permuting nodes permutes L
    # bit-exactly.
    return np.sort(A, axis=1).sum(axis=1)


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    """L = I - D^{-1/2} A D^{-1/2} with zero rows/columns for isolated nodes."""
    check_adjacency(A)
    d = _degrees(A)
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(d > 0, d**-0.5, 0.0)
    L = -inv_sqrt[:, None] * A * inv_sqrt[None, :]
    diag = np.where(d > 0, 1.0, 0.0)
    L[np.diag_indices_from(L)] = diag
    return L


def unnormalized_laplacian(A: np.ndarray) -> np.ndarray:
    """Combinatorial form D - A."""
    check_adjacency(A)
    return np.diag(_degrees(A)) - A


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Ties on magnitude resolve to the lowest index, making the convention
    deterministic.
    """
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        k = int(np.argmax(np.abs(col)))  # argmax takes the first maximum
        if col[k] < 0:
            V[:, j] = -col
    return V


def symmetric_eigendecomposition(
    M: np.ndarray,
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
    max_n: int = MAX_EIG_N,
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, orthonormal eigenvector columns). The
    off-diagonal Frobenius norm is driven below tol * ||M||_F. Exactly equal
    eigenvalues are ordered by the sign-fixed eigenvectors' lexicographic
    order so the decomposition is fully deterministic.
    """
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if M.ndim != 2 or M.shape[1] != n:
        raise GraphError(f"matrix must be square, got {M.shape}")
    if n > max_n:
        raise GraphError(f"matrix size {n} exceeds configured maximum {max_n}")
    scale = max(np.abs(M).max(), 1.0) if n else 1.0
    if np.abs(M - M.T).max(initial=0.0) > 1e-12 * scale:
        raise GraphError("matrix is not symmetric")

    B = (M + M.T) / 2.0
    V = np.eye(n)
    norm = np.linalg.norm(B)
    off_target = tol * max(norm, np.finfo(float).tiny)
    skip = 0.1 * off_target / max(n, 1)
    off_mask = ~np.eye(n, dtype=bool)

    converged = n < 2
    for _ in range(max_sweeps):
        # summed directly over off-diagonal entries; the subtraction form
        # sum(B^2) - sum(diag^2) cancels catastrophically near convergence
        off = np.sqrt(np.sum(B[off_mask] ** 2))
        if off <= off_target:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = B[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (B[q, q] - B[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t /= abs(theta) + np.sqrt(theta * theta + 1.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = B[:, p].copy(), B[:, q].copy()
                B[:, p] = c * rp - s * rq
                B[:, q] = s * rp + c * rq
                rp, rq = B[p, :].copy(), B[q, :].copy()
                B[p, :] = c * rp - s * rq
                B[q, :] = s * rp + c * rq
                B[p, q] = B[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        converged = np.sqrt(np.sum(B[off_mask] ** 2)) <= off_target
    if not converged:
        raise GraphError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = np.diag(B).copy()
    V = _fix_signs(V)
    order = np.array(
        sorted(range(n), key=lambda i: (w[i], tuple(V[:, i]))), dtype=np.intp
    )
    return w[order], V[:, order]


def decompose_laplacian(A: np.ndarray, normalized: bool = True) -> LaplacianDecomposition:
    L = normalized_laplacian(A) if normalized else unnormalized_laplacian(A)
    w, V = symmetric_eigendecomposition(L)
    return LaplacianDecomposition(L, w, V)


def spectral_embedding(
    decomp: LaplacianDecomposition, k: int, clamp: bool = True
) -> np.ndarray:
    """Eigenvectors of the k smallest eigenvalues as an n x k matrix."""
    n = decomp.eigenvectors.shape[0]
    if k < 1:
        raise GraphError(f"spectral embedding needs k >= 1, got {k}")
    if k > n:
        if not clamp:
            raise GraphError(f"k={k} exceeds node count {n}")
        k = n
    return decomp.eigenvectors[:, :k].copy()


# -- graph JSON interchange --------------------------------------------------
#
# {"node_ids": [[instrument, phase], ...],
#  "X": [row-major floats],
#  "A": [[i, j, w], ...],            # upper triangle, i < j, w > 0
#  "labels": {category: score} | null}


def graph_to_dict(g: SurgicalGraph) -> dict:
    edges = []
    for i in range(g.n):
        for j in range(i + 1, g.n):
            if g.A[i, j] > 0:
                edges.append([i, j, float(g.A[i, j])])
    return {
        "node_ids": [list(k) for k in g.node_ids],
        "X": [float(x) for x in g.X.reshape(-1)],
        "A": edges,
        "labels": dict(g.labels) if g.labels is not None else None,
    }


def graph_from_dict(obj: dict, clip_id: str = "") -> SurgicalGraph:
    try:
        node_ids = [tuple(k) for k in obj["node_ids"]]
        n = len(node_ids)
        flat = np.asarray(obj["X"], dtype=np.float64)
        if n == 0 or flat.size % n != 0:
            raise DataFormatError(f"graph X length {flat.size} not divisible by n={n}")
        X = flat.reshape(n, flat.size // n)
        A = np.zeros((n, n))
        for i, j, w in obj["A"]:
            A[int(i), int(j)] = A[int(j), int(i)] = float(w)
        labels = obj.get("labels")
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"bad graph JSON: {e}") from None
    check_adjacency(A)
    return SurgicalGraph(clip_id, node_ids, X, A, labels)


def save_graph(g: SurgicalGraph, path: Path | str) -> None:
    from .util import canonical_json_dumps

    Path(path).write_text(canonical_json_dumps(graph_to_dict(g)), encoding="utf-8")


def load_graph(path: Path | str) -> SurgicalGraph:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"graph file not found: {path}")
    return graph_from_dict(json.loads(path.read_text(encoding="utf-8")), clip_id=path.stem)
