"""Embedding export and 2-D projection for the explainability views.

Every clip contributes its post-layer-2 node embeddings plus one pooled row
(node_id "GRAPH"). Projection is plain PCA through the package's symmetric
eigensolver, with the shared largest-magnitude-entry-positive sign convention
so plots are stable across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, SchemaMismatchError, SkillGraphError
from .gnn import GnnModel, global_mean_pool, node_embeddings, positional_features
from .graph import SurgicalGraph, symmetric_eigendecomposition

GRAPH_ROW = "GRAPH"


@dataclass(frozen=True)
class EmbeddingRow:
    clip_id: str
    node_id: str  # "instrument/phase" or GRAPH_ROW
    vector: np.ndarray
    label: int | None = None


@dataclass
class EmbeddingTable:
    rows: list[EmbeddingRow]

    @property
    def width(self) -> int:
        return len(self.rows[0].vector) if self.rows else 0

    def graph_rows(self) -> "EmbeddingTable":
        return EmbeddingTable([r for r in self.rows if r.node_id == GRAPH_ROW])

    def matrix(self) -> np.ndarray:
        return np.stack([r.vector for r in self.rows])


def export_embeddings(
    model: GnnModel, graphs: list[SurgicalGraph], category: str | None = None
) -> EmbeddingTable:
    """Node embeddings plus the pooled graph row per clip, clip_id order."""
    category = category or model.category
    rows = []
    for g in sorted(graphs, key=lambda g: g.clip_id):
        if g.X.shape[1] != model.feature_dim:
            raise SchemaMismatchError(
                f"graph {g.clip_id!r} feature width {g.X.shape[1]} does not match "
                f"model feature_dim {model.feature_dim}"
            )
        label = None
        if g.labels is not None and category and category in g.labels:
            label = int(g.labels[category])
        pos = positional_features(g.A, model.spectral_k) if model.use_positional else None
        Z = node_embeddings(model, g, pos)
        for k, (inst, phase) in enumerate(g.node_ids):
            rows.append(EmbeddingRow(g.clip_id, f"{inst}/{phase}", Z[k], label))
        rows.append(EmbeddingRow(g.clip_id, GRAPH_ROW, global_mean_pool(Z), label))
    return EmbeddingTable(rows)


@dataclass(frozen=True)
class Projection:
    rows: list[tuple[str, str, np.ndarray, int | None]]  # clip, node, coords, label
    explained_variance_ratio: np.ndarray  # all components, descending


def pca_project(table: EmbeddingTable, dim: int = 2) -> Projection:
    """Center, eigendecompose the covariance, project onto the top components.

    Explained-variance ratios cover all components and sum to 1.
    """
    if len(table.rows) < 2:
        raise SkillGraphError("projection needs at least 2 rows")
    X = table.matrix()
    if dim > X.shape[1]:
        raise SkillGraphError(f"dim {dim} exceeds embedding width {X.shape[1]}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / X.shape[0]
    total = float(np.trace(cov))
    if total <= 1e-300:
        raise SkillGraphError("zero variance: all embedding rows identical")
    w, V = symmetric_eigendecomposition(cov)
    w = w[::-1]
    V = V[:, ::-1]
    ratios = np.maximum(w, 0.0) / total
    coords = centered @ V[:, :dim]
    rows = [
        (r.clip_id, r.node_id, coords[i], r.label) for i, r in enumerate(table.rows)
    ]
    return Projection(rows, ratios)


def nearest_exemplars(
    query_clip_id: str, table: EmbeddingTable, k: int
) -> list[tuple[str, float]]:
    """The k nearest clips to a query by pooled-embedding distance.

    Distances tie-break by clip_id ascending; the query itself is excluded.
    """
    if k < 1:
        raise SkillGraphError("k must be >= 1")
    graph_rows = table.graph_rows().rows
    by_id = {r.clip_id: r for r in graph_rows}
    if query_clip_id not in by_id:
        raise SkillGraphError(f"unknown clip {query_clip_id!r}")
    q = by_id[query_clip_id].vector
    scored = [
        (float(np.linalg.norm(r.vector - q)), r.clip_id)
        for r in graph_rows
        if r.clip_id != query_clip_id
    ]
    scored.sort()
    return [(cid, d) for d, cid in scored[:k]]


# -- CSV interchange -----------------------------------------------------------


def write_embedding_csv(table: EmbeddingTable, path: Path | str) -> None:
    width = table.width
    header = ["clip_id", "node_id"] + [f"z{i:02d}" for i in range(width)] + ["label"]
    lines = [",".join(header)]
    for r in table.rows:
        vals = ",".join(repr(float(v)) for v in r.vector)
        label = "" if r.label is None else str(r.label)
        lines.append(f"{r.clip_id},{r.node_id},{vals},{label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_embedding_csv(path: Path | str) -> EmbeddingTable:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"embedding table not found: {path}")
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["clip_id", "node_id"] or header[-1] != "label":
            raise DataFormatError(f"{path}: bad embedding CSV header")
        width = len(header) - 3
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path} row {i}: wrong field count")
            vec = np.array([float(v) for v in row[2 : 2 + width]])
            label = int(row[-1]) if row[-1] != "" else None
            rows.append(EmbeddingRow(row[0], row[1], vec, label))
    return EmbeddingTable(rows)


def write_projection_csv(projection: Projection, path: Path | str) -> None:
    dim = len(projection.rows[0][2]) if projection.rows else 2
    header = ["clip_id", "node_id"] + [f"pc{i + 1}" for i in range(dim)] + ["label"]
    lines = [",".join(header)]
    for clip_id, node_id, coords, label in projection.rows:
        vals = ",".join(repr(float(v)) for v in coords)
        lines.append(f"{clip_id},{node_id},{vals},{'' if label is None else label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
