"""Record model and tumbling-window chunking for multi-attribute streams.

A stream is a time-ordered sequence of instances, each a D-dimensional
vector with possibly missing attributes. Instances from all streams that
fall into the same fixed-length time window are merged into one chunk,
which is the unit every imputation routine operates on.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError, ParseError, SchemaError

logger = logging.getLogger(__name__)

# Cell spellings treated as a missing value on ingest (case-insensitive).
MISSING_TOKENS = frozenset({"", "nan", "null"})

# Column names with a reserved meaning in CSV headers.
STREAM_ID_COLUMN = "stream_id"
TIMESTAMP_COLUMN = "timestamp"


def _is_missing_token(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


@dataclass(frozen=True)
class DataInstance:
    """One measurement vector; ``None`` marks a missing attribute."""

    values: tuple[float | None, ...]
    stream_id: str | None = None
    timestamp: float | None = None

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def observed_count(self) -> int:
        return sum(v is not None for v in self.values)


@dataclass(frozen=True, eq=False)
class MaskChunk:
    """Binary observation indicator for a chunk: 1 observed, 0 missing."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape


@dataclass(frozen=True)
class DataChunk:
    """All instances of one tumbling window, flattened across streams.

    Rows keep their arrival order. ``dim`` is carried explicitly so that
    empty chunks (windows with no instances) stay well formed.
    """

    window_index: int
    rows: tuple[DataInstance, ...]
    dim: int

    def __post_init__(self):
        if self.window_index < 0:
            raise ValueError("window_index must be non-negative")
        for row in self.rows:
            if row.dim != self.dim:
                raise ValueError(
                    f"row dimensionality {row.dim} != chunk dimensionality {self.dim}"
                )

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def values_matrix(self) -> np.ndarray:
        """Dense float matrix of shape (n_rows, dim); NaN at missing entries."""
        out = np.full((self.n_rows, self.dim), np.nan, dtype=np.float64)
        for i, row in enumerate(self.rows):
            for d, v in enumerate(row.values):
                if v is not None:
                    out[i, d] = v
        return out

    def mask(self) -> MaskChunk:
        bits = np.zeros((self.n_rows, self.dim), dtype=np.uint8)
        for i, row in enumerate(self.rows):
            for d, v in enumerate(row.values):
                if v is not None:
                    bits[i, d] = 1
        return MaskChunk(bits)

    def observed_count(self) -> int:
        return sum(row.observed_count for row in self.rows)


def chunk_from_arrays(
    window_index: int,
    values: np.ndarray,
    mask: np.ndarray,
    timestamps: Sequence[float | None] | None = None,
    stream_ids: Sequence[str | None] | None = None,
) -> DataChunk:
    """Build a DataChunk from a dense value matrix and its mask."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask)
    if values.shape != mask.shape:
        raise ValueError(f"shape mismatch: values {values.shape}, mask {mask.shape}")
    rows = []
    for i in range(values.shape[0]):
        vals = tuple(
            float(values[i, d]) if mask[i, d] else None for d in range(values.shape[1])
        )
        rows.append(
            DataInstance(
                values=vals,
                stream_id=stream_ids[i] if stream_ids is not None else None,
                timestamp=timestamps[i] if timestamps is not None else None,
            )
        )
    return DataChunk(window_index=window_index, rows=tuple(rows), dim=values.shape[1])


@dataclass(frozen=True)
class ColumnSchema:
    """Declares which columns hold values and which carry metadata."""

    value_columns: tuple[str, ...]
    stream_id_column: str | None = STREAM_ID_COLUMN
    timestamp_column: str | None = TIMESTAMP_COLUMN

    @property
    def dim(self) -> int:
        return len(self.value_columns)

    @classmethod
    def from_header(cls, fieldnames: Sequence[str]) -> "ColumnSchema":
        """Schema from a CSV header: reserved names are metadata, the rest values."""
        names = [name.strip() for name in fieldnames]
        stream_col = STREAM_ID_COLUMN if STREAM_ID_COLUMN in names else None
        ts_col = TIMESTAMP_COLUMN if TIMESTAMP_COLUMN in names else None
        values = tuple(n for n in names if n not in (STREAM_ID_COLUMN, TIMESTAMP_COLUMN))
        if not values:
            raise SchemaError("header declares no value columns")
        return cls(value_columns=values, stream_id_column=stream_col, timestamp_column=ts_col)


def _open_text(source: str | Path | IO) -> tuple[IO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    # Byte streams are wrapped; the caller keeps ownership.
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def _parse_cell(cell: str, line_number: int) -> float | None:
    if _is_missing_token(cell):
        return None
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"cannot parse value {cell!r}", line_number) from None


def parse_records(
    source: str | Path | IO,
    format: str = "csv",
    schema: ColumnSchema | None = None,
) -> list[DataInstance]:
    """Parse a CSV or NDJSON file into a list of instances.

    Args:
        source: path or open file. CSV needs a header row; NDJSON is one
            JSON object per line with a ``values`` array plus optional
            ``stream_id`` and ``timestamp`` fields.
        format: "csv" or "ndjson".
        schema: column layout. When omitted it is taken from the CSV
            header (reserved names ``stream_id``/``timestamp`` become
            metadata columns) or from the first NDJSON record's arity.

    Returns:
        One DataInstance per record, in file order.

    Raises:
        ParseError: a cell or line cannot be decoded (reports the line).
        SchemaError: a record's arity disagrees with the schema.
    """
    if format not in ("csv", "ndjson"):
        raise ConfigurationError(f"unknown format {format!r}")
    handle, owned = _open_text(source)
    try:
        if format == "csv":
            return _parse_csv(handle, schema)
        return _parse_ndjson(handle, schema)
    finally:
        if owned:
            handle.close()


def _parse_csv(handle: IO, schema: ColumnSchema | None) -> list[DataInstance]:
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file: CSV header row is required", 1) from None
    names = [name.strip() for name in header]
    if schema is None:
        schema = ColumnSchema.from_header(names)
    index_of = {name: i for i, name in enumerate(names)}
    try:
        value_idx = [index_of[c] for c in schema.value_columns]
    except KeyError as exc:
        raise SchemaError(f"value column {exc.args[0]!r} not in header") from None
    stream_idx = index_of.get(schema.stream_id_column) if schema.stream_id_column else None
    ts_idx = index_of.get(schema.timestamp_column) if schema.timestamp_column else None

    instances = []
    for row in reader:
        line_no = reader.line_num
        if not row:
            continue
        if len(row) != len(names):
            raise SchemaError(
                f"line {line_no}: expected {len(names)} fields, got {len(row)}"
            )
        values = tuple(_parse_cell(row[i], line_no) for i in value_idx)
        stream_id = None
        if stream_idx is not None and not _is_missing_token(row[stream_idx]):
            stream_id = row[stream_idx].strip()
        timestamp = None
        if ts_idx is not None and not _is_missing_token(row[ts_idx]):
            try:
                timestamp = float(row[ts_idx])
            except ValueError:
                raise ParseError(
                    f"cannot parse timestamp {row[ts_idx]!r}", line_no
                ) from None
        instances.append(DataInstance(values=values, stream_id=stream_id, timestamp=timestamp))
    return instances


def _parse_ndjson(handle: IO, schema: ColumnSchema | None) -> list[DataInstance]:
    expected_dim = schema.dim if schema is not None else None
    instances = []
    for line_no, line in enumerate(handle, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
        if not isinstance(record, dict) or "values" not in record:
            raise ParseError("record must be an object with a 'values' array", line_no)
        raw_values = record["values"]
        if not isinstance(raw_values, list):
            raise ParseError("'values' must be an array", line_no)
        if expected_dim is None:
            expected_dim = len(raw_values)
        if len(raw_values) != expected_dim:
            raise SchemaError(
                f"line {line_no}: expected {expected_dim} values, got {len(raw_values)}"
            )
        values = []
        for v in raw_values:
            if v is None or (isinstance(v, str) and _is_missing_token(v)):
                values.append(None)
            elif isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParseError(f"non-numeric value {v!r}", line_no)
            elif isinstance(v, float) and math.isnan(v):
                values.append(None)
            else:
                values.append(float(v))
        stream_id = record.get("stream_id")
        if stream_id is not None:
            stream_id = str(stream_id)
        timestamp = record.get("timestamp")
        if timestamp is not None:
            if isinstance(timestamp, bool) or not isinstance(timestamp, (int, float)):
                raise ParseError(f"non-numeric timestamp {timestamp!r}", line_no)
            timestamp = float(timestamp)
        instances.append(
            DataInstance(values=tuple(values), stream_id=stream_id, timestamp=timestamp)
        )
    return instances


def tumbling_windows(
    instances: Iterable[DataInstance], window_length: float
) -> Iterator[DataChunk]:
    """Partition time-ordered instances into fixed-length window chunks.

    Window a covers [a*T, (a+1)*T). Instances from all streams landing in
    the same window are merged into one chunk, in arrival order. When no
    instance carries a timestamp, row order defines time with unit
    spacing. Instances with every value missing are dropped (counted and
    logged); empty windows between occupied ones yield empty chunks.

    Raises:
        ConfigurationError: window_length is not positive.
        IngestionError: timestamps decrease, are negative, or are present
            on only some instances.
    """
    if window_length <= 0:
        raise ConfigurationError(f"window_length must be positive, got {window_length}")

    current_index: int | None = None
    current_rows: list[DataInstance] = []
    dim: int | None = None
    prev_time: float | None = None
    timestamped: bool | None = None
    dropped = 0

    def finish(upto: int | None) -> Iterator[DataChunk]:
        nonlocal current_index, current_rows
        if current_index is None:
            return
        yield DataChunk(window_index=current_index, rows=tuple(current_rows), dim=dim)
        if upto is not None:
            for a in range(current_index + 1, upto):
                yield DataChunk(window_index=a, rows=(), dim=dim)
        current_rows = []

    for position, inst in enumerate(instances):
        has_ts = inst.timestamp is not None
        if timestamped is None:
            timestamped = has_ts
        elif timestamped != has_ts:
            raise IngestionError(
                "mixed timestamped and untimestamped instances in one stream"
            )
        t = inst.timestamp if timestamped else float(position)
        if t < 0:
            raise IngestionError(f"negative timestamp {t}")
        if prev_time is not None and t < prev_time:
            raise IngestionError(f"timestamps not in order: {t} after {prev_time}")
        prev_time = t
        if dim is None:
            dim = inst.dim
        if inst.observed_count == 0:
            dropped += 1
            continue
        index = int(t // window_length)
        if current_index is None:
            current_index = index
        elif index != current_index:
            yield from finish(index)
            current_index = index
        current_rows.append(inst)

    yield from finish(None)
    if dropped:
        logger.info("dropped %d all-missing instance(s) during chunking", dropped)
