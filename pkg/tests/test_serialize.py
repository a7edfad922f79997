"""Binary array container and checkpoint file tests."""

import numpy as np
import pytest

from streamfill.continuous import Reservoir
from streamfill.errors import ParseError
from streamfill.network import TrainConfig, init_model_state
from streamfill.records import DataInstance, MaskChunk
from streamfill.serialize import (
    load_model_state,
    load_reservoir,
    read_arrays,
    save_model_state,
    save_reservoir,
    write_arrays,
)


class TestArrayContainer:
    def test_round_trip_dtypes(self, tmp_path):
        path = tmp_path / "arrays.bin"
        rng = np.random.default_rng(81)
        original = {
            "floats": rng.normal(size=(3, 4)),
            "ints": rng.integers(-100, 100, size=7),
            "bits": rng.integers(0, 2, size=(2, 5)).astype(np.uint8),
            "scalarish": np.array([42.5]),
        }
        write_arrays(path, original)
        loaded = read_arrays(path)
        assert list(loaded) == list(original)
        for name in original:
            np.testing.assert_array_equal(loaded[name], original[name])
            assert loaded[name].dtype == original[name].dtype

    def test_nan_payload_bit_exact(self, tmp_path):
        path = tmp_path / "nan.bin"
        data = np.array([[np.nan, 1.0], [-np.inf, np.inf]])
        write_arrays(path, {"x": data})
        loaded = read_arrays(path)["x"]
        assert np.array_equal(
            loaded.view(np.uint64), data.view(np.uint64)
        )

    def test_empty_array(self, tmp_path):
        path = tmp_path / "empty.bin"
        write_arrays(path, {"nothing": np.zeros((0, 3))})
        loaded = read_arrays(path)["nothing"]
        assert loaded.shape == (0, 3)

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(ValueError):
            write_arrays(tmp_path / "bad.bin", {"x": np.zeros(2, dtype=np.float32)})

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "corrupt.bin"
        path.write_bytes(b"ZZZZ" + b"\x00" * 16)
        with pytest.raises(ParseError):
            read_arrays(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "version.bin"
        write_arrays(path, {"x": np.zeros(1)})
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(ParseError):
            read_arrays(path)


class TestModelState:
    def test_round_trip_bit_exact(self, tmp_path):
        path = tmp_path / "model.bin"
        state = init_model_state(5, TrainConfig(seed=17))
        save_model_state(path, state)
        loaded = load_model_state(path)
        for (name_a, pa), (name_b, pb) in zip(
            state.named_parameters(), loaded.named_parameters()
        ):
            assert name_a == name_b
            assert np.array_equal(pa, pb)
        assert loaded.rng_seed == 17

    def test_loaded_state_is_usable(self, tmp_path):
        path = tmp_path / "model.bin"
        state = init_model_state(3, TrainConfig(seed=2))
        save_model_state(path, state)
        loaded = load_model_state(path)
        assert loaded.layer1.hidden_dim == state.layer1.hidden_dim
        clone = loaded.copy()
        clone.layer2.b_rec += 1.0
        assert not np.array_equal(clone.layer2.b_rec, loaded.layer2.b_rec)


class TestReservoir:
    def test_round_trip_with_missing_and_timestamps(self, tmp_path):
        path = tmp_path / "reservoir.bin"
        rows = (
            DataInstance(values=(1.5, None, 3.0), timestamp=0.25),
            DataInstance(values=(None, 2.0, None), timestamp=1.75),
        )
        bits = np.array([[1, 0, 1], [0, 1, 0]], dtype=np.uint8)
        reservoir = Reservoir(rows=rows, masks=MaskChunk(bits))
        save_reservoir(path, reservoir)
        loaded = load_reservoir(path)
        assert loaded.rows == rows
        np.testing.assert_array_equal(loaded.masks.bits, bits)

    def test_round_trip_without_timestamps(self, tmp_path):
        path = tmp_path / "reservoir.bin"
        rows = (DataInstance(values=(4.0, 5.0)),)
        reservoir = Reservoir(
            rows=rows, masks=MaskChunk(np.array([[1, 1]], dtype=np.uint8))
        )
        save_reservoir(path, reservoir)
        loaded = load_reservoir(path)
        assert loaded.rows[0].timestamp is None
        assert loaded.rows[0].values == (4.0, 5.0)

    def test_empty_reservoir(self, tmp_path):
        path = tmp_path / "reservoir.bin"
        reservoir = Reservoir(
            rows=(), masks=MaskChunk(np.zeros((0, 4), dtype=np.uint8))
        )
        save_reservoir(path, reservoir)
        loaded = load_reservoir(path)
        assert loaded.rows == ()
        assert loaded.masks.bits.shape == (0, 4)
