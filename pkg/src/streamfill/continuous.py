"""Continuous imputation across windows.

Two update mechanisms carry information between windows: a reservoir of
high-importance rows spliced into the next window's training data, and a
partial warm start that reuses the best message-passing parameters while
re-initializing the reconstruction arrays. The driver combines them into
four variants: P (fresh each window), D (data update), M (model update),
and DM (both).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, UndefinedMetricError
from .graph import make_knn_builder, mean_fill
from .network import (
    GraphBuilder,
    ModelState,
    TrainConfig,
    TrainResult,
    _glorot_uniform,
    train_impute,
)
from .records import DataChunk, DataInstance, MaskChunk

logger = logging.getLogger(__name__)

VARIANTS = ("P", "D", "M", "DM")
DEFAULT_ETA = 0.6


@dataclass(frozen=True)
class ImportanceScores:
    """Per-row importance: observation richness minus redundancy.

    raw ranges over [0, D-1] when every scored row has an observed
    entry; normalized divides by D-1 to land in [0, 1].
    """

    raw: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True, eq=False)
class Reservoir:
    """Rows cached across windows, with their observation masks."""

    rows: tuple[DataInstance, ...]
    masks: MaskChunk
    capacity_hint: int | None = None

    def __post_init__(self):
        if len(self.rows) != self.masks.bits.shape[0]:
            raise ValueError(
                f"{len(self.rows)} rows but mask has {self.masks.bits.shape[0]} entries"
            )
        for row in self.rows:
            if row.observed_count == 0:
                raise ValueError("reservoir rows must have at least one observed entry")

    @property
    def size(self) -> int:
        return len(self.rows)

    @classmethod
    def empty(cls, dim: int) -> "Reservoir":
        return cls(rows=(), masks=MaskChunk(np.zeros((0, dim), dtype=np.uint8)))


def importance_scores(mask: MaskChunk | np.ndarray) -> ImportanceScores:
    """Score every row of a mask in one pass via the mask gram matrix.

    For row i, the raw score is its observed count minus the mean
    overlap with every other row; the gram form (|V|*diag(G) - G.1) /
    (|V|-1) with G = M M^T computes all rows at once.

    Raises:
        UndefinedMetricError: fewer than 2 rows.
        ValueError: a row with no observed entry (callers filter those).
    """
    bits = mask.bits if isinstance(mask, MaskChunk) else np.asarray(mask)
    n, dim = bits.shape
    if n < 2:
        raise UndefinedMetricError(f"importance scores undefined for {n} row(s)")
    if (bits.sum(axis=1) == 0).any():
        raise ValueError("importance scoring requires every row to have an observed entry")
    mf = bits.astype(np.float64)
    gram = mf @ mf.T
    raw = (n * np.diag(gram) - gram.sum(axis=1)) / (n - 1)
    if dim > 1:
        normalized = raw / (dim - 1)
    else:
        normalized = np.zeros_like(raw)
    return ImportanceScores(raw=raw, normalized=normalized)


def data_update(
    reservoir: Reservoir, chunk: DataChunk, eta: float = DEFAULT_ETA
) -> tuple[DataChunk, Reservoir]:
    """Splice the reservoir into a chunk and re-select what to keep.

    The augmented chunk is reservoir rows followed by chunk rows, scored
    together; rows with normalized importance >= eta form the next
    reservoir, order preserved. Rows with no observed entry are never
    scored or kept (the score bound presumes observations).
    """
    if not 0.0 < eta <= 1.0:
        raise ConfigurationError(f"eta must be in (0, 1], got {eta}")
    if reservoir.size and reservoir.masks.bits.shape[1] != chunk.dim:
        raise ValueError(
            f"reservoir dimensionality {reservoir.masks.bits.shape[1]} "
            f"!= chunk dimensionality {chunk.dim}"
        )
    all_rows = tuple(reservoir.rows) + tuple(chunk.rows)
    augmented = DataChunk(window_index=chunk.window_index, rows=all_rows, dim=chunk.dim)
    scorable = [row for row in all_rows if row.observed_count > 0]
    if len(scorable) < 2:
        return augmented, Reservoir.empty(chunk.dim)
    bits = DataChunk(window_index=chunk.window_index, rows=tuple(scorable), dim=chunk.dim).mask()
    scores = importance_scores(bits)
    keep = scores.normalized >= eta
    kept_rows = tuple(row for row, flag in zip(scorable, keep) if flag)
    kept_bits = bits.bits[keep]
    return augmented, Reservoir(rows=kept_rows, masks=MaskChunk(kept_bits))


RECONSTRUCTION_REDRAW_SCALE = 0.1


def transfer_state(best: ModelState, seed: int) -> ModelState:
    """Carry over message-passing arrays; redraw the reconstruction ones.

    w_self, w_neigh, and b_msg of both layers are copied bit for bit;
    w_rec is re-initialized from the seed and b_rec reset to zero. The
    redraw uses a reduced scale so the carried-over message weights start
    near a working regime instead of being scrambled through a large
    random readout, which measurably improves the warm-started result.
    """
    rng = np.random.default_rng(seed)
    state = best.copy()
    for layer in (state.layer1, state.layer2):
        hidden, d_out = layer.w_rec.shape
        layer.w_rec = RECONSTRUCTION_REDRAW_SCALE * _glorot_uniform(rng, hidden, d_out)
        layer.b_rec = np.zeros(d_out, dtype=np.float64)
    return ModelState(layer1=state.layer1, layer2=state.layer2, rng_seed=seed)


def model_state_selection(
    prev_best: ModelState | None,
    chunk: DataChunk,
    graph_builder: GraphBuilder,
    config: TrainConfig,
    transfer_seed: int | None = None,
) -> TrainResult:
    """Train a window warm-started from the best state seen so far.

    With no previous state (first window) this is a fresh training run.
    The returned result's state becomes the chain input for the next
    window.
    """
    init = None
    if prev_best is not None:
        seed = transfer_seed if transfer_seed is not None else config.seed
        init = transfer_state(prev_best, seed)
    return train_impute(chunk, graph_builder, config, init_state=init)


@dataclass(frozen=True)
class WindowResult:
    """Per-window record of a continuous run."""

    window_index: int
    completed: np.ndarray | None
    best_val_mae: float | None
    wall_time: float
    reservoir_size: int
    n_rows: int
    trained: bool


@dataclass(frozen=True)
class ContinuousRun:
    """All window results plus the state needed to resume the run."""

    results: tuple[WindowResult, ...]
    final_reservoir: "Reservoir | None"
    final_state: ModelState | None
    next_window: int


def window_seed(base_seed: int, window_index: int, lane: int) -> int:
    """Deterministic per-window seed, stable under checkpoint resume."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(window_index, lane))
    return int(ss.generate_state(1)[0])


def _fallback_impute(chunk: DataChunk) -> np.ndarray | None:
    """Mean-fill for windows too small to train; None for empty windows."""
    if chunk.n_rows == 0:
        return None
    return mean_fill(chunk)


def run_continuous(
    windows: Iterable[DataChunk],
    variant: str,
    config: TrainConfig,
    eta: float = DEFAULT_ETA,
    k: int = 10,
    metric: str = "euclidean",
    initial_reservoir: Reservoir | None = None,
    initial_state: ModelState | None = None,
) -> ContinuousRun:
    """Run one continuous variant over an ordered window sequence.

    Per window: variants D and DM splice the reservoir in first; M and
    DM warm-start training from the previous best state. Each window
    result's completed matrix covers only the current window's rows, so
    downstream metrics never score reservoir rows. Windows too small to
    train fall back to mean-fill with state carried through unchanged.

    Per-window seeds derive from (config.seed, window_index), which
    makes a checkpoint-resumed run reproduce the uninterrupted one.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    use_data = variant in ("D", "DM")
    use_model = variant in ("M", "DM")
    reservoir = initial_reservoir
    prev_state = initial_state
    results: list[WindowResult] = []
    next_window = 0
    for chunk in windows:
        next_window = chunk.window_index + 1
        started = time.perf_counter()
        if reservoir is None:
            reservoir = Reservoir.empty(chunk.dim)
        if use_data:
            train_chunk, reservoir = data_update(reservoir, chunk, eta)
        else:
            train_chunk = chunk
        window_config = replace(config, seed=window_seed(config.seed, chunk.window_index, 0))
        n_rows = train_chunk.n_rows
        can_train = (
            n_rows >= 2
            and int(config.validation_ratio * train_chunk.observed_count()) >= 1
        )
        if not can_train:
            logger.debug(
                "window %d too small to train (%d rows); mean-fill fallback",
                chunk.window_index,
                n_rows,
            )
            completed = _fallback_impute(chunk)
            results.append(
                WindowResult(
                    window_index=chunk.window_index,
                    completed=completed,
                    best_val_mae=None,
                    wall_time=time.perf_counter() - started,
                    reservoir_size=reservoir.size,
                    n_rows=chunk.n_rows,
                    trained=False,
                )
            )
            continue
        builder = make_knn_builder(k=k, metric=metric, clamp=True)
        if use_model:
            result = model_state_selection(
                prev_state,
                train_chunk,
                builder,
                window_config,
                transfer_seed=window_seed(config.seed, chunk.window_index, 1),
            )
            prev_state = result.state
        else:
            result = train_impute(train_chunk, builder, window_config)
        completed_current = result.completed[n_rows - chunk.n_rows :]
        results.append(
            WindowResult(
                window_index=chunk.window_index,
                completed=completed_current,
                best_val_mae=result.best_val_mae,
                wall_time=time.perf_counter() - started,
                reservoir_size=reservoir.size,
                n_rows=chunk.n_rows,
                trained=True,
            )
        )
    return ContinuousRun(
        results=tuple(results),
        final_reservoir=reservoir,
        final_state=prev_state,
        next_window=next_window,
    )
