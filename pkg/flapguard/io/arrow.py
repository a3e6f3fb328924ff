import json
import logging
from typing import (
    Any,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    TextIO,
    Tuple,
    Union,
)

import numpy as np
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv
import pyarrow.json
from pyarrow.lib import ArrowInvalid

from flapguard._typing import SeriesMap
from flapguard.arrow.event_table import EventTable
from flapguard.core.alerting import AlertRecord, Observation
from flapguard.core.ingest import (
    HourBucket,
    HourlySeries,
    InputFormat,
    OnError,
    parse_events,
)
from flapguard.core.whitelist import SupportCase
from flapguard.errors import MissingInput, SchemaMismatch
from flapguard.util.util import HOUR_SECONDS, TIMESTAMP_FORMAT

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ('node_id', 'org_id', 'hour_start', 'count')
CASE_COLUMNS = ('case_id', 'org_id', 'node_id', 'opened_at')
ROSTER_COLUMNS = ('node_id', 'org_id')

_WRITE_OPTIONS = dict(include_header=True, quoting_style='needed')


def _open(path: str, mode: str = 'r'):
    try:
        return open(path, mode, encoding=None if 'b' in mode else 'utf-8',
                    newline=None if 'b' in mode else '')
    except FileNotFoundError:
        raise MissingInput(f'Input file {path} does not exist.',
                           {'path': path})


def _read_string_csv(path: str, columns: Sequence[str],
                     required: Sequence[str]) -> pa.Table:
    """
    Read a CSV whose columns are all strings, checking its header.
    """
    try:
        with _open(path, 'rb') as f:
            table = pyarrow.csv.read_csv(
                f,
                convert_options=pyarrow.csv.ConvertOptions(
                    column_types={c: pa.string() for c in columns},
                    strings_can_be_null=False,
                ),
            )
    except ArrowInvalid as e:
        raise SchemaMismatch(f'Cannot read {path}: {e}', {'path': path})
    missing = [c for c in required if c not in table.column_names]
    if missing:
        raise SchemaMismatch(
            f'{path} lacks columns {missing}.',
            {'path': path, 'missing_columns': missing},
        )
    return table


def _format_hours(epoch_seconds: np.ndarray) -> pa.Array:
    timestamps = pa.array(epoch_seconds, type=pa.int64()).cast(
        pa.timestamp('s'))
    return pc.strftime(timestamps, format=TIMESTAMP_FORMAT)


def _parse_hours(strings: pa.ChunkedArray, path: str) -> np.ndarray:
    try:
        parsed = pc.strptime(strings, format=TIMESTAMP_FORMAT, unit='s')
    except ArrowInvalid as e:
        raise SchemaMismatch(f'Bad hour_start in {path}: {e}',
                             {'path': path})
    return parsed.cast(pa.int64()).to_numpy()


def write_table_csv(table: pa.Table, path: str) -> None:
    pyarrow.csv.write_csv(table, path,
                          pyarrow.csv.WriteOptions(**_WRITE_OPTIONS))


def write_rows_csv(rows: Sequence[Mapping[str, Any]],
                   path: str,
                   columns: Optional[Sequence[str]] = None) -> None:
    """
    Write report rows (dicts with identical keys) as CSV.
    """
    if rows:
        table = pa.Table.from_pylist(list(rows))
        if columns is not None:
            table = table.select(list(columns))
        # all-null columns have no CSV representation
        for i, column in enumerate(table.schema):
            if pa.types.is_null(column.type):
                table = table.set_column(
                    i, column.name, pa.nulls(table.num_rows, pa.string()))
    else:
        table = pa.table({c: pa.array([], type=pa.string())
                          for c in (columns or ())})
    write_table_csv(table, path)


def read_events(path: str,
                input_format: Union[InputFormat, str] = InputFormat.JSONL,
                on_error: Union[OnError, str] = OnError.RAISE) -> EventTable:
    """
    Parse an event log file, see :func:`flapguard.parse_events`.
    """
    with _open(path, 'rb') as f:
        return parse_events(f, input_format, on_error)


def write_events_jsonl(events: EventTable, path: str) -> None:
    """
    Write events as JSONL with RFC 3339 timestamps, in table order.
    """
    timestamps = _format_hours(events.timestamps).to_pylist()
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for node_id, org_id, ts, count in zip(
                events.node_ids.tolist(), events.org_ids.tolist(),
                timestamps, events.counts.tolist()):
            f.write(json.dumps({'node_id': node_id, 'org_id': org_id,
                                'timestamp': ts, 'count': count},
                               separators=(',', ':')))
            f.write('\n')


def _read_cases_jsonl(path: str) -> pa.Table:
    schema = pa.schema([(c, pa.string()) for c in CASE_COLUMNS])
    try:
        with _open(path, 'rb') as f:
            table = pyarrow.json.read_json(
                f, parse_options=pyarrow.json.ParseOptions(
                    explicit_schema=schema))
    except ArrowInvalid as e:
        raise SchemaMismatch(f'Cannot read {path}: {e}', {'path': path})
    for name in CASE_COLUMNS:
        if name not in table.column_names:
            table = table.append_column(
                name, pa.nulls(table.num_rows, pa.string()))
    missing = [c for c in ('case_id', 'opened_at')
               if table.column(c).null_count]
    if missing:
        raise SchemaMismatch(
            f'{path} has cases without {missing}.',
            {'path': path, 'missing_columns': missing},
        )
    return table


def read_cases(path: str,
               input_format: Union[InputFormat, str, None] = None
               ) -> List[SupportCase]:
    """
    Support cases from a CSV with header
    ``case_id,org_id,node_id,opened_at`` or from JSONL objects with the
    same keys; ``node_id`` may be empty or absent.

    The format follows the file extension (``.jsonl`` or ``.ndjson``
    for JSONL) unless ``input_format`` is given.
    """
    if input_format is None:
        input_format = (InputFormat.JSONL
                        if path.endswith(('.jsonl', '.ndjson'))
                        else InputFormat.CSV)
    if InputFormat(input_format) is InputFormat.JSONL:
        table = _read_cases_jsonl(path)
    else:
        table = _read_string_csv(path, CASE_COLUMNS,
                                 ('case_id', 'org_id', 'opened_at'))
    cases = []
    for row in table.to_pylist():
        try:
            cases.append(SupportCase.from_dict(row))
        except (KeyError, ValueError) as e:
            raise SchemaMismatch(f'Bad case row in {path}: {e}',
                                 {'path': path, 'row': row})
    return cases


def write_cases(cases: Iterable[SupportCase], path: str) -> None:
    cases = list(cases)
    write_table_csv(pa.table({
        'case_id': pa.array([c.case_id for c in cases], type=pa.string()),
        'org_id': pa.array([c.org_id for c in cases], type=pa.string()),
        'node_id': pa.array([c.node_id or '' for c in cases],
                            type=pa.string()),
        'opened_at': _format_hours(
            np.array([c.opened_at for c in cases], dtype=np.int64)),
    }), path)


def read_roster(path: str) -> Dict[str, str]:
    table = _read_string_csv(path, ROSTER_COLUMNS, ROSTER_COLUMNS)
    return dict(zip(table.column('node_id').to_pylist(),
                    table.column('org_id').to_pylist()))


def write_roster(roster: Mapping[str, str], path: str) -> None:
    node_ids = sorted(roster)
    write_table_csv(pa.table({
        'node_id': pa.array(node_ids, type=pa.string()),
        'org_id': pa.array([roster[n] for n in node_ids], type=pa.string()),
    }), path)


def series_to_table(series_by_node: SeriesMap) -> pa.Table:
    """
    Long-format table of hourly series: nodes in id order, hours
    ascending.
    """
    node_ids = sorted(series_by_node)
    series = [series_by_node[n] for n in node_ids]
    if not series:
        return pa.table({
            'node_id': pa.array([], type=pa.string()),
            'org_id': pa.array([], type=pa.string()),
            'hour_start': pa.array([], type=pa.string()),
            'count': pa.array([], type=pa.int64()),
        })
    lengths = np.array([s.num_hours for s in series], dtype=np.int64)
    starts = np.array([s.window_start.start for s in series], dtype=np.int64)
    first = int(starts.min())
    last = int((starts + lengths * HOUR_SECONDS).max())

    # every hour is formatted once and gathered per row
    grid = _format_hours(np.arange(first, last, HOUR_SECONDS,
                                   dtype=np.int64))
    row_offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    hour_idx = (np.repeat((starts - first) // HOUR_SECONDS - row_offsets,
                          lengths)
                + np.arange(int(lengths.sum()), dtype=np.int64))
    row_node = pa.array(np.repeat(np.arange(len(series)), lengths))
    return pa.table({
        'node_id': pc.take(pa.array(node_ids, type=pa.string()), row_node),
        'org_id': pc.take(pa.array([s.org_id for s in series],
                                   type=pa.string()), row_node),
        'hour_start': pc.take(grid, pa.array(hour_idx)),
        'count': pa.array(np.concatenate([s.counts for s in series]),
                          type=pa.int64()),
    })


def write_series_csv(series_by_node: SeriesMap, path: str) -> None:
    """
    Write hourly series as CSV with header ``node_id,org_id,hour_start,count``.
    """
    write_table_csv(series_to_table(series_by_node), path)


def _sorted_codes(strings: pa.Array) -> Tuple[np.ndarray, List[str]]:
    """
    Codes of each value in the sorted list of distinct values.
    """
    encoded = pc.dictionary_encode(strings)
    distinct = encoded.dictionary.to_pylist()
    order = sorted(range(len(distinct)), key=distinct.__getitem__)
    rank = np.empty(len(distinct), dtype=np.int64)
    rank[order] = np.arange(len(distinct), dtype=np.int64)
    return (rank[encoded.indices.to_numpy(zero_copy_only=False)],
            [distinct[i] for i in order])


def _single_chunk(table: pa.Table, name: str) -> pa.Array:
    column = table.column(name)
    if column.num_chunks == 1:
        return column.chunk(0)
    return pa.concat_arrays(column.chunks)


def read_series_csv(path: str) -> SeriesMap:
    """
    Read hourly series written by :func:`write_series_csv`.

    Raises
    ------
    SchemaMismatch
        If a column is missing, a count is empty or negative, or a
        node's hours are not one contiguous hourly run.
    """
    try:
        with _open(path, 'rb') as f:
            table = pyarrow.csv.read_csv(
                f,
                convert_options=pyarrow.csv.ConvertOptions(
                    column_types={'node_id': pa.string(),
                                  'org_id': pa.string(),
                                  'hour_start': pa.string(),
                                  'count': pa.int64()},
                    strings_can_be_null=False,
                ),
            )
    except ArrowInvalid as e:
        raise SchemaMismatch(f'Cannot read {path}: {e}', {'path': path})
    missing = [c for c in SERIES_COLUMNS if c not in table.column_names]
    if missing:
        raise SchemaMismatch(f'{path} lacks columns {missing}.',
                             {'path': path, 'missing_columns': missing})
    if not table.num_rows:
        return {}
    table = table.combine_chunks()

    count_column = _single_chunk(table, 'count')
    if count_column.null_count:
        raise SchemaMismatch(f'{path} has rows without a count.',
                             {'path': path})
    counts = count_column.to_numpy()
    negative = np.flatnonzero(counts < 0)
    if negative.size:
        # the header is line 1
        line = int(negative[0]) + 2
        raise SchemaMismatch(
            f'Negative count at line {line} of {path}.',
            {'path': path, 'line': line, 'count': int(counts[negative[0]])},
        )

    codes, names = _sorted_codes(_single_chunk(table, 'node_id'))
    orgs = pc.dictionary_encode(_single_chunk(table, 'org_id'))
    org_names = orgs.dictionary.to_pylist()
    org_codes = orgs.indices.to_numpy(zero_copy_only=False)
    hour_strings = pc.dictionary_encode(_single_chunk(table, 'hour_start'))
    hours = _parse_hours(hour_strings.dictionary, path)[
        hour_strings.indices.to_numpy(zero_copy_only=False)]

    unaligned = np.flatnonzero(hours % HOUR_SECONDS)
    if unaligned.size:
        raise _not_contiguous(path, names[codes[unaligned[0]]])
    first = int(hours.min())
    offsets = (hours - first) // HOUR_SECONDS
    key = codes * (int(offsets.max()) + 1) + offsets
    if np.any(np.diff(key) <= 0):
        order = np.argsort(key, kind='stable')
        codes, offsets, counts, org_codes = \
            codes[order], offsets[order], counts[order], org_codes[order]

    gaps = np.flatnonzero((codes[1:] == codes[:-1])
                          & (np.diff(offsets) != 1))
    if gaps.size:
        raise _not_contiguous(path, names[codes[gaps[0]]])

    bounds = np.searchsorted(codes, np.arange(len(names) + 1))
    series: Dict[str, HourlySeries] = {}
    for code, node_id in enumerate(names):
        lo, hi = int(bounds[code]), int(bounds[code + 1])
        try:
            series[node_id] = HourlySeries(
                node_id, org_names[org_codes[lo]],
                HourBucket(first + int(offsets[lo]) * HOUR_SECONDS),
                counts[lo:hi],
            )
        except ValueError as e:
            raise SchemaMismatch(f'Bad series of node {node_id} in '
                                 f'{path}: {e}',
                                 {'path': path, 'node_id': node_id})
    return series


def _not_contiguous(path: str, node_id: str) -> SchemaMismatch:
    return SchemaMismatch(
        f'Hours of node {node_id} in {path} are not contiguous.',
        {'path': path, 'node_id': node_id},
    )


def read_observations(stream: TextIO) -> Iterator[Observation]:
    """
    Observations from JSONL lines; blank lines are skipped.
    """
    for line_num, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            yield Observation.from_dict(json.loads(line))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaMismatch(f'Bad observation at line {line_num}: {e}',
                                 {'line': line_num})


def alert_line(alert: AlertRecord) -> str:
    return json.dumps(alert.to_dict(), separators=(',', ':'))


def write_alerts_jsonl(alerts: Iterable[AlertRecord], path: str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for alert in alerts:
            f.write(alert_line(alert))
            f.write('\n')


def read_alerts_jsonl(path: str) -> List[AlertRecord]:
    with _open(path) as f:
        try:
            return [AlertRecord.from_dict(json.loads(line))
                    for line in f if line.strip()]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaMismatch(f'Bad alert record in {path}: {e}',
                                 {'path': path})
