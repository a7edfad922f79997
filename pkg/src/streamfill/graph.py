"""Per-chunk similarity graphs with symmetric-normalized edge weights.

Each window gets its own graph: instances are mean-filled, linked to
their nearest neighbors (or to everything within a distance threshold),
the directed lists are symmetrized by union, and every edge (i, k) gets
weight 1/sqrt(deg(i)*deg(k)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable

import numpy as np
from scipy import sparse

from .errors import ConfigurationError
from .records import DataChunk

METRICS = ("euclidean", "cosine")


def mean_fill_matrix(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill missing entries with per-column observed means (0.0 if none)."""
    values = np.asarray(values, dtype=np.float64)
    mask_b = np.asarray(mask, dtype=bool)
    if values.shape != mask_b.shape:
        raise ValueError(f"shape mismatch: {values.shape} vs {mask_b.shape}")
    counts = mask_b.sum(axis=0)
    sums = np.where(mask_b, values, 0.0).sum(axis=0)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return np.where(mask_b, values, means)


def mean_fill(chunk: DataChunk) -> np.ndarray:
    """Dense matrix for a chunk with every missing entry mean-filled."""
    if chunk.n_rows == 0:
        raise ValueError("cannot mean-fill an empty chunk")
    return mean_fill_matrix(chunk.values_matrix(), chunk.mask().bits)


def pairwise_distances(filled: np.ndarray, metric: str) -> np.ndarray:
    """Dense pairwise distance matrix under the given metric.

    Cosine distance of a zero vector against anything is defined as 1
    (similarity 0). The diagonal is always exactly 0.
    """
    x = np.asarray(filled, dtype=np.float64)
    if metric == "euclidean":
        sq = np.sum(x * x, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        np.maximum(d2, 0.0, out=d2)
        dist = np.sqrt(d2)
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = x / safe[:, None]
        sim = unit @ unit.T
        np.clip(sim, -1.0, 1.0, out=sim)
        dist = 1.0 - sim
    else:
        raise ConfigurationError(f"unknown metric {metric!r}; expected one of {METRICS}")
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Undirected graph in compressed sparse row layout.

    ``indices[indptr[i]:indptr[i+1]]`` are node i's neighbors in
    ascending order and ``weights`` holds the matching normalized
    adjacency values.
    """

    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    metric: str
    k: int | None = None

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def edge_count(self) -> int:
        """Number of undirected edges."""
        return int(self.indices.size) // 2

    def norm_adjacency(self) -> sparse.csr_array:
        """Sparse matrix of the normalized weights (symmetric for built graphs)."""
        return sparse.csr_array(
            (self.weights, self.indices, self.indptr),
            shape=(self.node_count, self.node_count),
        )

    def mean_adjacency(self) -> sparse.csr_array:
        """Row-stochastic neighbor-mean operator; all-zero row if isolated."""
        deg = self.degrees
        inv = np.repeat(
            np.divide(1.0, deg, out=np.zeros(deg.shape, dtype=np.float64), where=deg > 0),
            deg,
        )
        return sparse.csr_array(
            (inv, self.indices, self.indptr),
            shape=(self.node_count, self.node_count),
        )

    def dump_edges(self, target: str | Path | IO) -> None:
        """Write the undirected edge list as CSV rows (i, k, weight)."""
        own = isinstance(target, (str, Path))
        handle = open(target, "w", encoding="utf-8", newline="") if own else target
        try:
            writer = csv.writer(handle)
            writer.writerow(["i", "k", "weight"])
            for i in range(self.node_count):
                start, stop = self.indptr[i], self.indptr[i + 1]
                for k, w in zip(self.indices[start:stop], self.weights[start:stop]):
                    if i < k:
                        writer.writerow([i, int(k), repr(float(w))])
        finally:
            if own:
                handle.close()

    @classmethod
    def from_weight_matrix(
        cls, weights: np.ndarray, metric: str = "custom", k: int | None = None
    ) -> "SimilarityGraph":
        """Graph with the given per-edge weights taken verbatim.

        Test fixture constructor: nonzero entries of ``weights`` become
        directed edges with exactly that propagation weight, bypassing
        both the builders and the degree normalization.
        """
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weight matrix must be square, got {w.shape}")
        mat = sparse.csr_array(w)
        mat.sort_indices()
        return cls(
            node_count=w.shape[0],
            indptr=mat.indptr.astype(np.int64),
            indices=mat.indices.astype(np.int64),
            weights=mat.data.astype(np.float64),
            metric=metric,
            k=k,
        )


def _graph_from_adjacency(
    adj: np.ndarray, metric: str, k: int | None
) -> SimilarityGraph:
    """CSR graph from a boolean symmetric adjacency with degree weights."""
    deg = adj.sum(axis=1).astype(np.float64)
    weights = np.zeros(adj.shape, dtype=np.float64)
    rows, cols = np.nonzero(adj)
    weights[rows, cols] = 1.0 / np.sqrt(deg[rows] * deg[cols])
    mat = sparse.csr_array(weights)
    mat.sort_indices()
    return SimilarityGraph(
        node_count=adj.shape[0],
        indptr=mat.indptr.astype(np.int64),
        indices=mat.indices.astype(np.int64),
        weights=mat.data.astype(np.float64),
        metric=metric,
        k=k,
    )


def knn_graph(filled: np.ndarray, k: int, metric: str = "euclidean") -> SimilarityGraph:
    """K-nearest-neighbor graph on mean-filled rows, symmetrized by union.

    Distance ties break toward the lower node index, so the build is
    deterministic. Self-loops are never created.

    Raises:
        ConfigurationError: fewer than 2 rows, or k outside [1, n_rows).
    """
    x = np.asarray(filled, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ConfigurationError(f"need at least 2 rows to build a graph, got {n}")
    if not 1 <= k < n:
        raise ConfigurationError(f"k must satisfy 1 <= k < {n}, got {k}")
    dist = pairwise_distances(x, metric)
    np.fill_diagonal(dist, np.inf)
    # Stable sort keeps equal distances in index order (lower index wins).
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    directed = np.zeros((n, n), dtype=bool)
    directed[np.repeat(np.arange(n), k), nearest.ravel()] = True
    adj = directed | directed.T
    np.fill_diagonal(adj, False)
    return _graph_from_adjacency(adj, metric, k)


def threshold_graph(
    filled: np.ndarray, metric: str = "euclidean", threshold: float = 1.0
) -> SimilarityGraph:
    """Graph linking every pair at distance strictly below the threshold."""
    if threshold < 0:
        raise ConfigurationError(f"threshold must be non-negative, got {threshold}")
    x = np.asarray(filled, dtype=np.float64)
    dist = pairwise_distances(x, metric)
    adj = dist < threshold
    np.fill_diagonal(adj, False)
    return _graph_from_adjacency(adj, metric, None)


def make_knn_builder(
    k: int = 10, metric: str = "euclidean", clamp: bool = True
) -> Callable[[np.ndarray], SimilarityGraph]:
    """Graph-builder closure for the training loop.

    With ``clamp`` the neighbor count is reduced to n_rows - 1 on windows
    smaller than k + 1, instead of failing the builder's precondition.
    """
    def build(filled: np.ndarray) -> SimilarityGraph:
        effective = min(k, filled.shape[0] - 1) if clamp else k
        return knn_graph(filled, k=effective, metric=metric)

    return build
