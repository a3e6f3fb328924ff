from typing import Dict, List, Union, TYPE_CHECKING

from pyarrow.lib import Array, ChunkedArray

if TYPE_CHECKING:
    from flapguard.core.ingest import HourlySeries
    from flapguard.core.baseline import ThresholdSet

NodeId = str

SeriesMap = Dict[NodeId, 'HourlySeries']
ThresholdMap = Dict[NodeId, 'ThresholdSet']
WeeklyAlerts = Dict[NodeId, List[int]]

PyArrowArray = Union[Array, ChunkedArray]
