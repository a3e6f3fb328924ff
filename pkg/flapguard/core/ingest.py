import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import (
    Any,
    BinaryIO,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    TextIO,
    Tuple,
    Union,
)

import numpy as np
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv
import pyarrow.json
from pyarrow.lib import ArrowException

from flapguard._typing import SeriesMap
from flapguard.arrow.event_table import EVENT_SCHEMA, EventTable
from flapguard.errors import EmptyWindow, MalformedRecord, WindowMismatch
from flapguard.util.util import (
    HOUR_SECONDS,
    TIMESTAMP_FORMAT,
    floor_hour,
    format_timestamp,
    hours_between,
    is_hour_aligned,
    parse_timestamp,
)

logger = logging.getLogger(__name__)

EVENT_FIELDS = ('node_id', 'org_id', 'timestamp', 'count')
REQUIRED_EVENT_FIELDS = ('node_id', 'org_id', 'timestamp')
DEFAULT_EVENT_COUNT = 1
INT64_MIN, INT64_MAX = -2 ** 63, 2 ** 63 - 1

_EPOCH_PATTERN = r'^-?[0-9]{1,18}$'
_COUNT_PATTERN = r'^[0-9]{0,18}$'


class InputFormat(Enum):
    JSONL = 'jsonl'
    CSV = 'csv'


class OnError(Enum):
    """
    Bad row policy: fail on the first malformed row, or skip and count.
    """
    RAISE = 'raise'
    SKIP = 'skip'


@dataclass(frozen=True)
class EventRecord:
    """
    One raw event observation.

    Parameters
    ----------
    node_id : str
        Node (switch) identifier.
    org_id : str
        Organization identifier.
    timestamp : int
        UTC epoch seconds.
    count : int
        Number of events represented by this record.
    """
    node_id: str
    org_id: str
    timestamp: int
    count: int = DEFAULT_EVENT_COUNT

    def __post_init__(self) -> None:
        if not self.node_id:
            raise ValueError('node_id must be non-empty')
        if not self.org_id:
            raise ValueError('org_id must be non-empty')
        if self.count < 0:
            raise ValueError(f'count must be >= 0, got {self.count}')


@dataclass(frozen=True, order=True)
class HourBucket:
    """
    An hour, identified by its UTC start instant (epoch seconds).
    """
    start: int

    def __post_init__(self) -> None:
        if not is_hour_aligned(self.start):
            raise ValueError(
                f'Hour bucket start {self.start} is not hour-aligned.'
            )

    @classmethod
    def floor(cls, timestamp: Union[int, str]) -> 'HourBucket':
        return cls(floor_hour(parse_timestamp(timestamp)))

    @classmethod
    def parse(cls, value: Union['HourBucket', int, str]) -> 'HourBucket':
        """
        Build an HourBucket from an instant that must already be aligned.
        """
        if isinstance(value, HourBucket):
            return value
        return cls(parse_timestamp(value))

    def shift(self, hours: int) -> 'HourBucket':
        return HourBucket(self.start + hours * HOUR_SECONDS)

    def hours_until(self, other: 'HourBucket') -> int:
        return hours_between(self.start, other.start)

    def isoformat(self) -> str:
        return format_timestamp(self.start)

    def __str__(self) -> str:
        return self.isoformat()


@dataclass(eq=False)
class HourlySeries:
    """
    Zero-filled hourly event counts of one node over a calendar window.

    ``counts[i]`` holds the events of hour ``window_start + i hours``.
    The counts array is read-only.
    """
    node_id: str
    org_id: str
    window_start: HourBucket
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1:
            raise ValueError('counts must be one-dimensional')
        if counts.size and counts.min() < 0:
            raise ValueError('counts must be non-negative')
        if counts.flags.writeable:
            counts = counts.copy() if counts is self.counts else counts
            counts.setflags(write=False)
        self.counts = counts

    @property
    def num_hours(self) -> int:
        return int(self.counts.size)

    @property
    def window_end(self) -> HourBucket:
        return self.window_start.shift(self.num_hours)

    def total(self) -> int:
        return int(self.counts.sum())

    def index_of(self, hour: HourBucket) -> int:
        return self.window_start.hours_until(hour)

    def covers(self, start: HourBucket, end: HourBucket) -> bool:
        return self.window_start <= start and end <= self.window_end

    def slice(self, start: HourBucket, end: HourBucket) -> 'HourlySeries':
        """
        Sub-window [start, end) of the series.

        Raises
        ------
        WindowMismatch
            If the requested window is not inside the series window.
        """
        if not self.covers(start, end) or end < start:
            raise WindowMismatch(
                f'Series of node {self.node_id} covers '
                f'[{self.window_start}, {self.window_end}), '
                f'requested [{start}, {end}).',
                {'node_id': self.node_id},
            )
        first = self.index_of(start)
        last = self.index_of(end)
        return HourlySeries(self.node_id, self.org_id, start,
                            self.counts[first:last])

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, HourlySeries):
            return NotImplemented
        return (self.node_id == other.node_id
                and self.org_id == other.org_id
                and self.window_start == other.window_start
                and np.array_equal(self.counts, other.counts))

    def __repr__(self) -> str:
        return (f'HourlySeries(node_id={self.node_id!r}, '
                f'org_id={self.org_id!r}, window_start={self.window_start}, '
                f'num_hours={self.num_hours}, total={self.total()})')


class EventParser:
    """
    Parser of raw event logs.

    Supports JSONL (one object per line) and CSV with a header naming
    ``node_id``, ``org_id``, ``timestamp`` and optionally ``count``.
    Absent or empty counts default to 1. Timestamps are RFC 3339 or
    integer epoch seconds.

    Well-formed logs are read in one pass with the Arrow JSON and CSV
    readers. When Arrow rejects the input, or a column fails validation,
    the log is scanned line by line so every bad row is reported with
    its line number.

    Parameters
    ----------
    input_format : InputFormat or str
        'jsonl' or 'csv'.
    on_error : OnError or str
        'raise' fails on the first malformed row with
        :class:`flapguard.errors.MalformedRecord`; 'skip' drops it and
        records its line number in ``skipped_lines``.
    """
    def __init__(self,
                 input_format: Union[InputFormat, str] = InputFormat.JSONL,
                 on_error: Union[OnError, str] = OnError.RAISE) -> None:
        self._format = InputFormat(input_format)
        self._on_error = OnError(on_error)
        self.skipped_lines: List[int] = []

    def parse(self, stream: Union[BinaryIO, TextIO, Iterable]) -> EventTable:
        self.skipped_lines = []
        data = _read_bytes(stream)
        if not data.strip():
            return EventTable.empty()

        events = self._read_arrow(data)
        if events is None:
            logger.debug('arrow reader declined input, scanning lines')
            events = self._scan_lines(data)

        if self.skipped_lines:
            logger.warning(
                'skipped_rows=%d first_lines=%s',
                len(self.skipped_lines), self.skipped_lines[:5]
            )
        return events

    def _read_arrow(self, data: bytes) -> Optional[EventTable]:
        """
        Columnar read of a clean log, None if any row needs a closer look.
        """
        try:
            data.decode('utf-8')
        except UnicodeDecodeError:
            return None
        table = None
        if self._format is InputFormat.JSONL:
            for ts_type in (pa.string(), pa.int64()):
                try:
                    table = _read_jsonl_table(data, ts_type)
                    break
                except ArrowException:
                    continue
        else:
            try:
                table = _read_csv_table(data)
            except ArrowException:
                return None
        if table is None:
            return None
        if any(f not in table.column_names for f in REQUIRED_EVENT_FIELDS):
            return None

        try:
            columns = [
                _identifier_column(table.column('node_id')),
                _identifier_column(table.column('org_id')),
                _timestamp_column(table.column('timestamp')),
                _count_column(table),
            ]
        except ArrowException:
            return None
        if any(c is None for c in columns):
            return None
        return EventTable(pa.Table.from_arrays(columns, schema=EVENT_SCHEMA))

    def _scan_lines(self, data: bytes) -> EventTable:
        node_ids: List[str] = []
        org_ids: List[str] = []
        timestamps: List[int] = []
        counts: List[int] = []

        lines = self._decoded_lines(data)
        if self._format is InputFormat.JSONL:
            rows = self._jsonl_rows(lines)
        else:
            rows = self._csv_rows(lines)

        for line, row in rows:
            try:
                node_id, org_id, ts, count = _validate_row(row)
            except ValueError as e:
                self._reject(line, str(e))
                continue
            node_ids.append(node_id)
            org_ids.append(org_id)
            timestamps.append(ts)
            counts.append(count)
        return EventTable.from_columns(node_ids, org_ids, timestamps, counts)

    def _decoded_lines(self, data: bytes) -> Iterator[str]:
        # A line that is not UTF-8 becomes blank so later line numbers hold.
        for line_no, raw in enumerate(data.splitlines(keepends=True), 1):
            try:
                yield raw.decode('utf-8')
            except UnicodeDecodeError as e:
                self._reject(line_no, f'invalid UTF-8 at byte {e.start}')
                yield '\n'

    def _reject(self, line: int, reason: str) -> None:
        if self._on_error is OnError.RAISE:
            raise MalformedRecord(line, reason)
        self.skipped_lines.append(line)

    def _jsonl_rows(self,
                    lines: Iterable[str]) -> Iterator[Tuple[int, Mapping]]:
        for line_no, text in enumerate(lines, 1):
            if not text.strip():
                continue
            try:
                row = json.loads(text)
            except json.JSONDecodeError as e:
                self._reject(line_no, f'invalid JSON: {e.msg}')
                continue
            if not isinstance(row, dict):
                self._reject(line_no, 'expected a JSON object')
                continue
            yield line_no, row

    def _csv_rows(self,
                  lines: Iterable[str]) -> Iterator[Tuple[int, Mapping]]:
        reader = csv.reader(lines)
        header: Optional[List[str]] = None
        for values in reader:
            line_no = reader.line_num
            if not values or not any(v.strip() for v in values):
                continue
            if header is None:
                header = [v.strip() for v in values]
                missing = [f for f in REQUIRED_EVENT_FIELDS
                           if f not in header]
                if missing:
                    raise MalformedRecord(
                        line_no, f'CSV header lacks columns {missing}'
                    )
                continue
            if len(values) > len(header):
                self._reject(line_no, f'expected at most {len(header)} '
                                      f'fields, got {len(values)}')
                continue
            row = dict(zip(header, values))
            if any(f not in row for f in REQUIRED_EVENT_FIELDS):
                self._reject(line_no, 'missing mandatory fields')
                continue
            yield line_no, row


def _read_bytes(stream: Union[BinaryIO, TextIO, Iterable]) -> bytes:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        return bytes(stream)
    if isinstance(stream, str):
        return stream.encode('utf-8')
    if hasattr(stream, 'read'):
        data = stream.read()
        return data.encode('utf-8') if isinstance(data, str) else bytes(data)
    lines = []
    for line in stream:
        if isinstance(line, str):
            line = line.encode('utf-8')
        lines.append(line if line.endswith(b'\n') else line + b'\n')
    return b''.join(lines)


def _read_jsonl_table(data: bytes, ts_type: pa.DataType) -> pa.Table:
    schema = pa.schema([
        ('node_id', pa.string()),
        ('org_id', pa.string()),
        ('timestamp', ts_type),
    ])
    return pyarrow.json.read_json(
        pa.BufferReader(data),
        parse_options=pyarrow.json.ParseOptions(explicit_schema=schema),
    )


def _read_csv_table(data: bytes) -> pa.Table:
    return pyarrow.csv.read_csv(
        pa.BufferReader(data),
        convert_options=pyarrow.csv.ConvertOptions(
            column_types={f: pa.string() for f in EVENT_FIELDS},
            strings_can_be_null=False,
        ),
    )


def _any(mask: Any) -> bool:
    return bool(pc.any(mask).as_py())


def _as_array(values: Any) -> pa.Array:
    if isinstance(values, pa.ChunkedArray):
        return values.combine_chunks()
    return values


def _identifier_column(column: pa.ChunkedArray) -> Optional[pa.Array]:
    if not pa.types.is_string(column.type) or column.null_count:
        return None
    padded = pc.not_equal(pc.utf8_trim_whitespace(column), column)
    blank = pc.equal(pc.utf8_length(column), 0)
    if _any(pc.or_(padded, blank)):
        return None
    return _as_array(column)


def _timestamp_column(column: pa.ChunkedArray) -> Optional[pa.Array]:
    if column.null_count:
        return None
    if pa.types.is_integer(column.type):
        return _as_array(pc.cast(column, pa.int64()))
    if not pa.types.is_string(column.type):
        return None
    epoch = pc.match_substring_regex(column, _EPOCH_PATTERN)
    numeric = pc.cast(pc.if_else(epoch, column, '0'), pa.int64())
    parsed = pc.cast(
        pc.strptime(column, format=TIMESTAMP_FORMAT, unit='s',
                    error_is_null=True),
        pa.int64(),
    )
    timestamps = pc.if_else(epoch, numeric, parsed)
    if timestamps.null_count:
        return None
    return _as_array(timestamps)


def _count_column(table: pa.Table) -> Optional[pa.Array]:
    if 'count' not in table.column_names:
        return pa.array(np.full(table.num_rows, DEFAULT_EVENT_COUNT,
                                dtype=np.int64))
    column = table.column('count')
    if pa.types.is_null(column.type):
        return pa.array(np.full(table.num_rows, DEFAULT_EVENT_COUNT,
                                dtype=np.int64))
    if pa.types.is_integer(column.type):
        counts = pc.cast(column, pa.int64())
    elif pa.types.is_string(column.type):
        text = pc.fill_null(column, '')
        if _any(pc.invert(pc.match_substring_regex(text, _COUNT_PATTERN))):
            return None
        text = pc.if_else(pc.equal(text, ''), str(DEFAULT_EVENT_COUNT), text)
        counts = pc.cast(text, pa.int64())
    else:
        return None
    counts = pc.fill_null(counts, DEFAULT_EVENT_COUNT)
    if _any(pc.less(counts, 0)):
        return None
    return _as_array(counts)


def _validate_row(row: Mapping) -> Tuple[str, str, int, int]:
    node_id = _identifier(row.get('node_id'), 'node_id')
    org_id = _identifier(row.get('org_id'), 'org_id')

    raw_ts = row.get('timestamp')
    if raw_ts is None or raw_ts == '':
        raise ValueError('missing timestamp')
    try:
        ts = parse_timestamp(raw_ts)
    except (ValueError, OverflowError) as e:
        raise ValueError(f'bad timestamp {raw_ts!r}: {e}')
    if not INT64_MIN <= ts <= INT64_MAX:
        raise ValueError(f'timestamp {raw_ts!r} is out of range')

    count = _count(row.get('count'))
    return node_id, org_id, ts, count


def _identifier(value: Any, name: str) -> str:
    if isinstance(value, bool) or value is None:
        raise ValueError(f'missing {name}')
    if isinstance(value, int):
        value = str(value)
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f'{name} must be a non-empty string')
    return value.strip()


def _count(value: Any) -> int:
    if value is None:
        return DEFAULT_EVENT_COUNT
    if isinstance(value, str):
        value = value.strip()
        if not value:
            return DEFAULT_EVENT_COUNT
        try:
            value = int(value)
        except ValueError:
            raise ValueError(f'count {value!r} is not an integer')
    elif isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f'count {value!r} is not an integer')
    if value < 0:
        raise ValueError(f'count must be >= 0, got {value}')
    if value > INT64_MAX:
        raise ValueError(f'count {value} exceeds the 64-bit range')
    return value


def parse_events(stream: Union[BinaryIO, TextIO, Iterable],
                 input_format: Union[InputFormat, str] = InputFormat.JSONL,
                 on_error: Union[OnError, str] = OnError.RAISE
                 ) -> EventTable:
    """
    Parse a raw event log into an :class:`EventTable`.

    Records keep their input order.

    Parameters
    ----------
    stream : file-like, bytes, str or iterable of lines
        Event log contents.
    input_format : InputFormat or str
        'jsonl' or 'csv'.
    on_error : OnError or str
        'raise' (default) or 'skip'.

    Returns
    -------
    EventTable
        Parsed events; iterating yields :class:`EventRecord` objects.

    Raises
    ------
    MalformedRecord
        On the first bad row when ``on_error`` is 'raise'.

    Examples
    --------
    >>> from flapguard import parse_events
    >>> events = parse_events(
    ...     b'node_id,org_id,timestamp,count\\nn1,o1,2023-01-02T03:04:05Z,3\\n',
    ...     'csv')
    >>> list(events)
    [EventRecord(node_id='n1', org_id='o1', timestamp=1672628645, count=3)]
    """
    return EventParser(input_format, on_error).parse(stream)


def _epoch(value: Union[HourBucket, int, str]) -> int:
    return HourBucket.parse(value).start


def infer_window(events: EventTable) -> Tuple[HourBucket, HourBucket]:
    """
    Smallest hour-aligned window [start, end) holding every event.
    """
    if not len(events):
        raise EmptyWindow('Cannot infer a window from an empty event log.')
    ts = events.timestamps
    return (HourBucket(floor_hour(int(ts.min()))),
            HourBucket(floor_hour(int(ts.max())) + HOUR_SECONDS))


def aggregate_hourly(events: EventTable,
                     window: Tuple[Union[HourBucket, int, str],
                                   Union[HourBucket, int, str]],
                     roster: Optional[Mapping[str, str]] = None
                     ) -> SeriesMap:
    """
    Sum event counts into zero-filled hourly series per node.

    Events outside the half-open window [start, end) are ignored.
    A node appears in the result if it has at least one in-window event
    or is listed in ``roster``. A node's organization comes from the
    roster, otherwise it is the smallest org id seen in its events.

    Parameters
    ----------
    events : EventTable
        Parsed events.
    window : Tuple[HourBucket, HourBucket]
        Hour-aligned [start, end).
    roster : Mapping[str, str], optional
        node_id -> org_id of all known nodes, including silent ones.

    Returns
    -------
    Dict[str, HourlySeries]
        Series per node id, in node id order.

    Raises
    ------
    EmptyWindow
        If start >= end.
    """
    start, end = _epoch(window[0]), _epoch(window[1])
    if start >= end:
        raise EmptyWindow(
            f'Window start {format_timestamp(start)} is not before '
            f'end {format_timestamp(end)}.',
            {'start': format_timestamp(start), 'end': format_timestamp(end)},
        )
    n_hours = hours_between(start, end)
    roster = dict(roster or {})

    ts = events.timestamps
    in_window = (ts >= start) & (ts < end)
    node_ids = events.node_ids[in_window]
    org_ids = events.org_ids[in_window]
    counts = events.counts[in_window]
    hour_idx = (ts[in_window] - start) // HOUR_SECONDS

    names = np.unique(np.concatenate([
        node_ids.astype(str), np.array(sorted(roster), dtype=str)
    ]))
    codes = np.searchsorted(names, node_ids)

    flat = codes.astype(np.int64) * n_hours + hour_idx
    matrix = np.zeros(len(names) * n_hours, dtype=np.int64)
    np.add.at(matrix, flat, counts.astype(np.int64, copy=False))
    matrix = matrix.reshape(len(names), n_hours)
    matrix.setflags(write=False)

    orgs = _first_org_per_code(codes, org_ids)
    window_start = HourBucket(start)

    series: Dict[str, HourlySeries] = {}
    for code, node_id in enumerate(names.tolist()):
        org_id = roster.get(node_id) or orgs.get(code)
        series[node_id] = HourlySeries(node_id, org_id, window_start,
                                       matrix[code])

    logger.info('aggregated nodes=%d hours=%d in_window_events=%d',
                len(series), n_hours, int(in_window.sum()))
    return series


def _first_org_per_code(codes: np.ndarray,
                        org_ids: np.ndarray) -> Dict[int, str]:
    if not len(codes):
        return {}
    order = np.lexsort((org_ids, codes))
    sorted_codes = codes[order]
    first = np.r_[True, sorted_codes[1:] != sorted_codes[:-1]]
    return dict(zip(sorted_codes[first].tolist(),
                    org_ids[order][first].tolist()))
