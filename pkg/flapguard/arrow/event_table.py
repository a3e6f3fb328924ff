from typing import Iterable, Iterator, List, Sequence, TYPE_CHECKING

import numpy as np

import pyarrow as pa
from pyarrow.lib import ChunkedArray, ArrowInvalid

from flapguard._typing import PyArrowArray

if TYPE_CHECKING:
    from flapguard.core.ingest import EventRecord


EVENT_SCHEMA = pa.schema([
    pa.field('node_id', pa.string(), nullable=False),
    pa.field('org_id', pa.string(), nullable=False),
    pa.field('timestamp', pa.int64(), nullable=False),
    pa.field('count', pa.int64(), nullable=False),
])


class EventTable:
    """
    Columnar sequence of event records, backed by an Arrow Table.

    EventTable is what the ingestion parser produces and what hourly
    aggregation consumes: iterating it yields
    :class:`flapguard.core.ingest.EventRecord` objects, while aggregation
    reads whole columns as Numpy arrays.

    Columns are ``node_id``, ``org_id``, ``timestamp`` (UTC epoch seconds)
    and ``count``.

    Parameters
    ----------
    table : pyarrow.Table
        Arrow Table following ``EVENT_SCHEMA``.
    """
    def __init__(self, table: pa.Table) -> None:
        assert table is not None
        if table.schema.names != EVENT_SCHEMA.names:
            raise ValueError(
                f'Event table columns {table.schema.names} do not match '
                f'{EVENT_SCHEMA.names}.'
            )
        self._table: pa.Table = table.combine_chunks()

    @classmethod
    def from_columns(cls,
                     node_ids: Sequence[str],
                     org_ids: Sequence[str],
                     timestamps: Iterable[int],
                     counts: Iterable[int]) -> 'EventTable':
        return cls(pa.Table.from_arrays(
            [
                pa.array(node_ids, type=pa.string()),
                pa.array(org_ids, type=pa.string()),
                pa.array(np.asarray(timestamps, dtype=np.int64)),
                pa.array(np.asarray(counts, dtype=np.int64)),
            ],
            schema=EVENT_SCHEMA,
        ))

    @classmethod
    def from_records(cls, records: Iterable['EventRecord']) -> 'EventTable':
        records = list(records)
        return cls.from_columns(
            [r.node_id for r in records],
            [r.org_id for r in records],
            [r.timestamp for r in records],
            [r.count for r in records],
        )

    @classmethod
    def empty(cls) -> 'EventTable':
        return cls.from_columns([], [], [], [])

    def get_table(self) -> pa.Table:
        return self._table

    @property
    def num_rows(self) -> int:
        return self._table.num_rows

    def __len__(self) -> int:
        return self._table.num_rows

    def __iter__(self) -> Iterator['EventRecord']:
        from flapguard.core.ingest import EventRecord
        columns = self._table.to_pydict()
        for node_id, org_id, ts, count in zip(columns['node_id'],
                                              columns['org_id'],
                                              columns['timestamp'],
                                              columns['count']):
            yield EventRecord(node_id, org_id, ts, count)

    def __getitem__(self, index: int) -> 'EventRecord':
        from flapguard.core.ingest import EventRecord
        row = self._table.slice(index, 1).to_pylist()
        if not row:
            raise IndexError(index)
        return EventRecord(**row[0])

    def records(self) -> List['EventRecord']:
        return list(self)

    @property
    def node_ids(self) -> np.ndarray:
        return self._column('node_id')

    @property
    def org_ids(self) -> np.ndarray:
        return self._column('org_id')

    @property
    def timestamps(self) -> np.ndarray:
        return self._column('timestamp')

    @property
    def counts(self) -> np.ndarray:
        return self._column('count')

    def _column(self, column_name: str) -> np.ndarray:
        chunked = self._table.column(column_name)
        if chunked.num_chunks == 0:
            array = pa.array([], type=chunked.type)
        else:
            array = chunked.chunk(0)
        return self._arrow_array_to_numpy(array)

    @staticmethod
    def _arrow_array_to_numpy(array: PyArrowArray) -> np.ndarray:
        """
        Convert Arrow Array or ChunkedArray to Numpy array.

        Returns
        -------
        :class:`numpy.ndarray`
        """
        if isinstance(array, ChunkedArray):
            np_arr = array.to_numpy()
        else:
            try:
                np_arr = array.to_numpy(zero_copy_only=True)
            except ArrowInvalid:
                np_arr = array.to_numpy(zero_copy_only=False)

        # Arrow hands out 'object' arrays for strings.
        if array.type == 'string' and array.null_count == 0:
            np_arr = np_arr.astype('U') if len(np_arr) else np.array([], 'U1')

        return np_arr
