"""Parameter-free imputation by iterated neighbor averaging.

Each step replaces every row with the normalized-weight sum of its
neighbors' rows, then the bound condition writes observed values back.
Iterating from the mean-filled matrix converges to a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SimilarityGraph, mean_fill
from .records import DataChunk, MaskChunk

DEFAULT_MAX_ITERS = 40
DEFAULT_TOL = 1e-6


def feaprop_step(x_matrix: np.ndarray, graph: SimilarityGraph) -> np.ndarray:
    """One propagation step: row i becomes sum of weight[i,k] * row k.

    Rows with no neighbors come out as the zero vector.
    """
    x = np.asarray(x_matrix, dtype=np.float64)
    if x.shape[0] != graph.node_count:
        raise ValueError(
            f"matrix has {x.shape[0]} rows but graph has {graph.node_count} nodes"
        )
    return graph.norm_adjacency() @ x


def apply_bound(
    x_tilde: np.ndarray, x_original: np.ndarray, mask: MaskChunk | np.ndarray
) -> np.ndarray:
    """Overwrite reconstructed entries with original values where observed."""
    bits = mask.bits if isinstance(mask, MaskChunk) else np.asarray(mask)
    if x_tilde.shape != x_original.shape or x_tilde.shape != bits.shape:
        raise ValueError(
            f"shape mismatch: {x_tilde.shape}, {x_original.shape}, {bits.shape}"
        )
    return np.where(bits.astype(bool), x_original, x_tilde)


@dataclass(frozen=True)
class PropagationRun:
    """Outcome of an iterated propagation: final matrix plus stop reason."""

    matrix: np.ndarray
    iterations: int
    converged: bool


def feaprop_iterate(
    x_filled: np.ndarray,
    mask: np.ndarray,
    graph: SimilarityGraph,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> PropagationRun:
    """Alternate step and bound from a filled matrix until stable.

    Stops when the max absolute change between successive bounded
    iterates falls below tol, or after max_iters steps.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    x = np.asarray(x_filled, dtype=np.float64)
    iterations = 0
    converged = False
    for _ in range(max_iters):
        nxt = apply_bound(feaprop_step(x, graph), x_filled, mask)
        iterations += 1
        delta = float(np.max(np.abs(nxt - x))) if x.size else 0.0
        x = nxt
        if delta < tol:
            converged = True
            break
    return PropagationRun(matrix=x, iterations=iterations, converged=converged)


def feaprop_impute(
    chunk: DataChunk,
    graph: SimilarityGraph,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Complete a chunk by iterated propagation; observed entries untouched."""
    x0 = mean_fill(chunk)
    run = feaprop_iterate(x0, chunk.mask().bits, graph, max_iters=max_iters, tol=tol)
    return run.matrix
