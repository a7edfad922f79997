"""Shared test fixtures."""

import numpy as np
import pytest

from streamfill.records import chunk_from_arrays


@pytest.fixture
def make_chunk():
    """Factory for random chunks with controllable missingness.

    Every row keeps at least one observed entry so the chunk stays
    trainable and scoreable.
    """

    def _make(rng, n_rows, dim, missing_rate=0.3, window_index=0):
        values = rng.normal(size=(n_rows, dim))
        mask = (rng.random((n_rows, dim)) >= missing_rate).astype(np.uint8)
        for i in range(n_rows):
            if mask[i].sum() == 0:
                mask[i, rng.integers(dim)] = 1
        values = np.where(mask == 1, values, np.nan)
        return chunk_from_arrays(window_index, values, mask)

    return _make
