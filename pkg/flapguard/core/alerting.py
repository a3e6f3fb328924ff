import logging
from collections.abc import Mapping as MappingABC
from dataclasses import dataclass, replace
from enum import Enum
from typing import (
    Any,
    Container,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Union,
)

import numpy as np

from flapguard._typing import SeriesMap
from flapguard.core.baseline import ThresholdSet
from flapguard.core.ingest import HourBucket, HourlySeries
from flapguard.errors import UnknownNode, WindowMismatch
from flapguard.util.util import WEEK_HOURS

logger = logging.getLogger(__name__)


class UnknownNodePolicy(Enum):
    """
    What to do with observations of nodes that have no thresholds.

    ``alert-always`` treats the node's bound as 0.
    """
    SKIP = 'skip'
    ALERT_ALWAYS = 'alert-always'
    ERROR = 'error'


@dataclass(frozen=True)
class Observation:
    """
    Observed event count of one node-hour.
    """
    node_id: str
    org_id: str
    hour: HourBucket
    count: int

    @classmethod
    def from_dict(cls, row: Mapping[str, Any]) -> 'Observation':
        count = row.get('count')
        if isinstance(count, bool) or not isinstance(count, int) \
                or count < 0:
            raise ValueError(f'count must be a non-negative integer: {count!r}')
        return cls(str(row['node_id']), str(row['org_id']),
                   HourBucket.parse(row['hour_start']), count)


@dataclass(frozen=True)
class AlertRecord:
    """
    One node-hour whose observed count exceeds its bound.

    ``suppressed`` is set when the node is whitelist-exempt.
    """
    node_id: str
    org_id: str
    hour: HourBucket
    observed: int
    bound: int
    suppressed: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'node_id': self.node_id,
            'org_id': self.org_id,
            'hour_start': self.hour.isoformat(),
            'observed': self.observed,
            'bound': self.bound,
            'suppressed': self.suppressed,
        }

    @classmethod
    def from_dict(cls, row: Mapping[str, Any]) -> 'AlertRecord':
        return cls(row['node_id'], row['org_id'],
                   HourBucket.parse(row['hour_start']),
                   int(row['observed']), int(row['bound']),
                   bool(row.get('suppressed', False)))


@dataclass
class AlertSummary:
    observations: int = 0
    alerts: int = 0
    suppressed: int = 0
    unknown_nodes: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {
            'observations': self.observations,
            'alerts': self.alerts,
            'suppressed': self.suppressed,
            'unknown_nodes': self.unknown_nodes,
        }


class AlertDetector:
    """
    Compares observed hourly counts against final thresholds.

    An observation alerts when its count is strictly greater than the
    bound of its hour-of-week. Exempt nodes produce suppressed records,
    which are counted in ``summary`` but only returned when
    ``include_suppressed`` is set.

    Parameters
    ----------
    thresholds : Mapping[str, ThresholdSet]
        Final thresholds per node. Never modified.
    policy : UnknownNodePolicy or str
        Handling of nodes without thresholds.
    include_suppressed : bool
        Return suppressed records as well.
    week_start : HourBucket, int or str, optional
        Target week of nodes without thresholds. Defaults to the week of
        the given thresholds; required for the 'alert-always' policy
        when there are none.
    """
    def __init__(self,
                 thresholds: Mapping[str, ThresholdSet],
                 policy: Union[UnknownNodePolicy, str] = UnknownNodePolicy.SKIP,
                 include_suppressed: bool = False,
                 week_start: Union[HourBucket, int, str, None] = None
                 ) -> None:
        self._thresholds = thresholds
        self._policy = UnknownNodePolicy(policy)
        self._include_suppressed = include_suppressed
        self._zero_bounds = np.zeros(WEEK_HOURS, dtype=np.int64)
        self._week_start = (HourBucket.parse(week_start)
                            if week_start is not None
                            else _common_week_start(thresholds))
        self.summary = AlertSummary()

    def observe(self, observation: Observation) -> Optional[AlertRecord]:
        """
        Score one observation.

        Returns
        -------
        AlertRecord or None
            The alert, or None when the observation does not alert,
            belongs to a skipped unknown node, or is suppressed and
            suppressed records are not requested.

        Raises
        ------
        UnknownNode
            For nodes without thresholds under the 'error' policy.
        WindowMismatch
            If the hour is outside the thresholds' target week, or an
            unknown node must alert and no target week is known.
        """
        self.summary.observations += 1
        thresholds = self._thresholds.get(observation.node_id)
        if thresholds is None:
            bounds = self._unknown_node_bounds(observation.node_id)
            if bounds is None:
                return None
            week_start = self._unknown_week_start(observation.node_id)
            exempt = False
        else:
            bounds = thresholds.bounds
            week_start, exempt = thresholds.target_week_start, \
                thresholds.exempt

        idx = _hour_of_week(week_start, observation.hour,
                            observation.node_id)
        bound = int(bounds[idx])
        if observation.count <= bound:
            return None
        record = AlertRecord(observation.node_id, observation.org_id,
                             observation.hour, observation.count, bound,
                             exempt)
        return self._emit(record)

    def detect(self,
               observations: Iterable[Observation]) -> Iterator[AlertRecord]:
        """
        Stream detection, one observation at a time, in input order.
        """
        for observation in observations:
            record = self.observe(observation)
            if record is not None:
                yield record

    def detect_series(self, series_by_node: SeriesMap) -> List[AlertRecord]:
        """
        Batch detection over hourly series, ordered by node id then hour.

        Every series must lie inside the thresholds' target week.
        """
        records: List[AlertRecord] = []
        for node_id in sorted(series_by_node):
            series = series_by_node[node_id]
            self.summary.observations += series.num_hours
            thresholds = self._thresholds.get(node_id)
            if thresholds is None:
                bounds = self._unknown_node_bounds(node_id)
                if bounds is None:
                    continue
                week_start, exempt = self._unknown_week_start(node_id), False
            else:
                bounds = thresholds.bounds
                week_start, exempt = thresholds.target_week_start, \
                    thresholds.exempt
            offset = _series_offset(series, week_start)
            week_bounds = bounds[offset:offset + series.num_hours]
            for idx in np.flatnonzero(series.counts > week_bounds).tolist():
                record = AlertRecord(
                    node_id, series.org_id,
                    series.window_start.shift(idx),
                    int(series.counts[idx]), int(week_bounds[idx]), exempt,
                )
                emitted = self._emit(record)
                if emitted is not None:
                    records.append(emitted)
        return records

    def _emit(self, record: AlertRecord) -> Optional[AlertRecord]:
        if record.suppressed:
            self.summary.suppressed += 1
            return record if self._include_suppressed else None
        self.summary.alerts += 1
        return record

    def _unknown_week_start(self, node_id: str) -> HourBucket:
        if self._week_start is None:
            raise WindowMismatch(
                f'No target week for node {node_id}: there are no '
                f'thresholds and no week_start was given.',
                {'node_id': node_id},
            )
        return self._week_start

    def _unknown_node_bounds(self, node_id: str) -> Optional[np.ndarray]:
        self.summary.unknown_nodes += 1
        if self._policy is UnknownNodePolicy.ERROR:
            raise UnknownNode(f'No thresholds for node {node_id}.',
                              {'node_id': node_id})
        if self._policy is UnknownNodePolicy.SKIP:
            return None
        return self._zero_bounds


def _common_week_start(
        thresholds: Mapping[str, ThresholdSet]) -> Optional[HourBucket]:
    for t in thresholds.values():
        return t.target_week_start
    return None


def _hour_of_week(week_start: HourBucket,
                  hour: HourBucket,
                  node_id: str) -> int:
    idx = week_start.hours_until(hour)
    if not 0 <= idx < WEEK_HOURS:
        raise WindowMismatch(
            f'Observation of node {node_id} at {hour} is outside the '
            f'threshold week starting {week_start}.',
            {'node_id': node_id, 'hour_start': hour.isoformat()},
        )
    return idx


def _series_offset(series: HourlySeries, week_start: HourBucket) -> int:
    offset = week_start.hours_until(series.window_start)
    if offset < 0 or offset + series.num_hours > WEEK_HOURS:
        raise WindowMismatch(
            f'Series of node {series.node_id} '
            f'[{series.window_start}, {series.window_end}) is not inside '
            f'the threshold week starting {week_start}.',
            {'node_id': series.node_id},
        )
    return offset


def exceedances(series: HourlySeries, thresholds: ThresholdSet) -> np.ndarray:
    """
    Hour-of-week indices of the target week where the observed count is
    strictly greater than the bound.

    Raises
    ------
    WindowMismatch
        If the series does not cover the whole target week.
    """
    start = thresholds.target_week_start
    if not series.covers(start, thresholds.target_week_end):
        raise WindowMismatch(
            f'Series of node {series.node_id} does not cover the week '
            f'starting {start}.',
            {'node_id': series.node_id},
        )
    first = series.index_of(start)
    week = series.counts[first:first + WEEK_HOURS]
    return np.flatnonzero(week > thresholds.bounds)


def detect(series_or_stream: Union[SeriesMap, Iterable[Observation]],
           final_thresholds: Mapping[str, ThresholdSet],
           policy: Union[UnknownNodePolicy, str] = UnknownNodePolicy.SKIP,
           include_suppressed: bool = False,
           week_start: Union[HourBucket, int, str, None] = None
           ) -> List[AlertRecord]:
    """
    Detect alerts in hourly series (batch) or an observation stream.

    Parameters
    ----------
    series_or_stream : Dict[str, HourlySeries] or Iterable[Observation]
        Batch input keyed by node id, or observations.
    final_thresholds : Mapping[str, ThresholdSet]
        Thresholds per node.
    policy : UnknownNodePolicy or str
        'skip', 'alert-always' or 'error'.
    include_suppressed : bool
        Also return records of whitelist-exempt nodes.
    week_start : HourBucket, int or str, optional
        Target week, needed when ``final_thresholds`` is empty and the
        policy is 'alert-always'.

    Returns
    -------
    List[AlertRecord]
    """
    detector = AlertDetector(final_thresholds, policy, include_suppressed,
                             week_start)
    if isinstance(series_or_stream, MappingABC):
        records = detector.detect_series(series_or_stream)
    else:
        records = list(detector.detect(series_or_stream))
    logger.info('detect %s', ' '.join(
        f'{k}={v}' for k, v in detector.summary.to_dict().items()))
    return records


def observations_from_series(
        series_by_node: SeriesMap) -> Iterator[Observation]:
    """
    Flatten hourly series into observations, node by node.
    """
    for node_id in sorted(series_by_node):
        series = series_by_node[node_id]
        for idx, count in enumerate(series.counts.tolist()):
            yield Observation(node_id, series.org_id,
                              series.window_start.shift(idx), count)


def apply_whitelist(alerts: Iterable[AlertRecord],
                    exempt_nodes: Container[str]) -> List[AlertRecord]:
    """
    Mark the alerts of exempt nodes as suppressed.

    Detecting against finalized thresholds gives the same records as
    detecting against interim thresholds and applying this, since
    finalization keeps the bounds of every node.
    """
    return [
        replace(a, suppressed=True) if a.node_id in exempt_nodes else a
        for a in alerts
    ]
