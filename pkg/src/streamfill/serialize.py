"""Binary container for named arrays, plus model and reservoir files.

The container is a flat sequence of named arrays with shape headers and
little-endian payloads. Round-trips are bit-exact, including NaN
payloads, which makes it safe for checkpoint/resume equality checks.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .continuous import Reservoir
from .errors import ParseError
from .network import ModelState, MsgPropLayerParams
from .records import DataInstance, MaskChunk

MAGIC = b"SFAR"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f8"): 0,
    np.dtype("<i8"): 1,
    np.dtype("uint8"): 2,
}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("uint8")}


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(arrays)))
        for name, array in arrays.items():
            data = np.ascontiguousarray(array)
            if data.dtype == np.float64:
                data = data.astype("<f8", copy=False)
            elif data.dtype == np.int64:
                data = data.astype("<i8", copy=False)
            elif data.dtype != np.uint8:
                raise ValueError(
                    f"unsupported dtype {data.dtype} for array {name!r}"
                )
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _DTYPE_CODES[data.dtype], data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def read_arrays(path: str | Path) -> dict[str, np.ndarray]:
    """Read a container written by write_arrays; insertion order preserved."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ParseError(f"{path}: not an array container (bad magic)")
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported container version {version}")
    offset = 9
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", blob, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = (
            np.frombuffer(blob[offset : offset + n_bytes], dtype=dtype)
            .reshape(shape)
            .copy()
        )
        offset += n_bytes
    return arrays


def save_model_state(path: str | Path, state: ModelState) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, param in state.named_parameters():
        arrays[name] = param
    arrays["meta.rng_seed"] = np.array([state.rng_seed], dtype=np.int64)
    write_arrays(path, arrays)


def load_model_state(path: str | Path) -> ModelState:
    arrays = read_arrays(path)

    def layer(prefix: str) -> MsgPropLayerParams:
        return MsgPropLayerParams(
            w_self=arrays[f"{prefix}.w_self"],
            w_neigh=arrays[f"{prefix}.w_neigh"],
            b_msg=arrays[f"{prefix}.b_msg"],
            w_rec=arrays[f"{prefix}.w_rec"],
            b_rec=arrays[f"{prefix}.b_rec"],
        )

    return ModelState(
        layer1=layer("layer1"),
        layer2=layer("layer2"),
        rng_seed=int(arrays["meta.rng_seed"][0]),
    )


def save_reservoir(path: str | Path, reservoir: Reservoir) -> None:
    """Persist cached rows: values with NaN placeholders, mask bits, timestamps."""
    n = len(reservoir.rows)
    dim = reservoir.masks.bits.shape[1]
    values = np.full((n, dim), np.nan, dtype=np.float64)
    timestamps = np.full(n, np.nan, dtype=np.float64)
    for i, row in enumerate(reservoir.rows):
        for d, v in enumerate(row.values):
            if v is not None:
                values[i, d] = v
        if row.timestamp is not None:
            timestamps[i] = row.timestamp
    write_arrays(
        path,
        {
            "values": values,
            "mask": reservoir.masks.bits,
            "timestamps": timestamps,
        },
    )


def load_reservoir(path: str | Path) -> Reservoir:
    arrays = read_arrays(path)
    values = arrays["values"]
    mask = arrays["mask"]
    timestamps = arrays["timestamps"]
    rows = []
    for i in range(values.shape[0]):
        vals = tuple(
            float(values[i, d]) if mask[i, d] else None for d in range(values.shape[1])
        )
        ts = float(timestamps[i]) if np.isfinite(timestamps[i]) else None
        rows.append(DataInstance(values=vals, timestamp=ts))
    return Reservoir(rows=tuple(rows), masks=MaskChunk(mask))
