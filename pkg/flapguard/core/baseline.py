import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from flapguard._typing import SeriesMap, ThresholdMap
from flapguard.core.ingest import HourBucket, HourlySeries
from flapguard.errors import ConfigError, InsufficientHistory
from flapguard.executor.executor import get_executor
from flapguard.util.util import HOURS_PER_DAY, WEEK_DAYS, WEEK_HOURS

logger = logging.getLogger(__name__)

DEFAULT_BUFFER_DAYS = 27
DEFAULT_SIGMA_MULTIPLIER = 3.0
DEFAULT_LOOKBACK_DAYS = 35


@dataclass(frozen=True)
class BaselineConfig:
    """
    Parameters of the week-over-week baseline.

    Parameters
    ----------
    buffer_days : int
        Days of week-over-week changes feeding the upper bound ratio.
    sigma_multiplier : float
        Number of standard deviations added to the mean change.
    lookback_days : int
        History a node must have before the target week.
    buffer_offset_days : int
        Days between the end of the buffer and the target week start.
        0 lets the buffer overlap the seed week; 7 makes them disjoint.
    """
    buffer_days: int = DEFAULT_BUFFER_DAYS
    sigma_multiplier: float = DEFAULT_SIGMA_MULTIPLIER
    lookback_days: int = DEFAULT_LOOKBACK_DAYS
    buffer_offset_days: int = 0

    def __post_init__(self) -> None:
        if self.buffer_days <= 0:
            raise ConfigError('buffer_days must be positive',
                              {'buffer_days': self.buffer_days})
        if self.sigma_multiplier < 0:
            raise ConfigError('sigma_multiplier must be non-negative',
                              {'sigma_multiplier': self.sigma_multiplier})
        if self.buffer_offset_days < 0:
            raise ConfigError('buffer_offset_days must be non-negative',
                              {'buffer_offset_days': self.buffer_offset_days})
        if self.lookback_days < self.required_days:
            raise ConfigError(
                f'lookback_days must be at least {self.required_days} '
                f'(buffer_days + 7 + buffer_offset_days)',
                {'lookback_days': self.lookback_days},
            )

    @property
    def required_days(self) -> int:
        return self.buffer_days + WEEK_DAYS + self.buffer_offset_days


@dataclass(eq=False)
class WowBuffer:
    """
    Absolute add-one-smoothed week-over-week changes of one node,
    in chronological order.
    """
    node_id: str
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class UpperBoundRatio:
    """
    Upper bound ratio ``tau = mean + k * sigma`` of a week-over-week buffer.
    """
    tau: float
    mean: float
    sigma: float
    sample_size: int


class ThresholdKind(Enum):
    INTERIM = 'interim'
    FINAL = 'final'


@dataclass(eq=False)
class ThresholdSet:
    """
    Per hour-of-week upper-bound counts of one node for a target week.

    ``bounds[i]`` applies to hour ``target_week_start + i hours``.
    ``exempt`` is only ever set on final thresholds of whitelisted nodes;
    such nodes keep their interim bounds for audit but never alert.
    """
    node_id: str
    org_id: str
    target_week_start: HourBucket
    bounds: np.ndarray
    kind: ThresholdKind = ThresholdKind.INTERIM
    exempt: bool = False

    def __post_init__(self) -> None:
        bounds = np.array(self.bounds, dtype=np.int64)
        if bounds.shape != (WEEK_HOURS,):
            raise ValueError(
                f'Expected {WEEK_HOURS} bounds, got shape {bounds.shape}'
            )
        if bounds.min() < 0:
            raise ValueError('Bounds must be non-negative')
        bounds.setflags(write=False)
        self.bounds = bounds
        self.kind = ThresholdKind(self.kind)

    @property
    def target_week_end(self) -> HourBucket:
        return self.target_week_start.shift(WEEK_HOURS)

    def replace(self, **changes: Any) -> 'ThresholdSet':
        fields = dict(node_id=self.node_id, org_id=self.org_id,
                      target_week_start=self.target_week_start,
                      bounds=self.bounds, kind=self.kind, exempt=self.exempt)
        fields.update(changes)
        return ThresholdSet(**fields)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, ThresholdSet):
            return NotImplemented
        return (self.node_id == other.node_id
                and self.org_id == other.org_id
                and self.target_week_start == other.target_week_start
                and self.kind is other.kind
                and self.exempt == other.exempt
                and np.array_equal(self.bounds, other.bounds))

    def __repr__(self) -> str:
        return (f'ThresholdSet(node_id={self.node_id!r}, '
                f'target_week_start={self.target_week_start}, '
                f'kind={self.kind.value}, exempt={self.exempt}, '
                f'max_bound={int(self.bounds.max())})')


@dataclass(frozen=True)
class SkippedNode:
    node_id: str
    reason: str


@dataclass
class ThresholdBatch(Mapping):
    """
    Interim thresholds of a batch of nodes, with the nodes that had to be
    skipped. Behaves as a read-only ``node_id -> ThresholdSet`` mapping.
    """
    target_week_start: HourBucket
    thresholds: ThresholdMap = field(default_factory=dict)
    skipped: List[SkippedNode] = field(default_factory=list)

    def __getitem__(self, node_id: str) -> ThresholdSet:
        return self.thresholds[node_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.thresholds)

    def __len__(self) -> int:
        return len(self.thresholds)


def compute_wow_buffer(series: HourlySeries,
                       buffer_days: int = DEFAULT_BUFFER_DAYS,
                       end: Optional[HourBucket] = None) -> WowBuffer:
    """
    Week-over-week percent change buffer of the ``buffer_days * 24``
    hours before ``end``.

    Each value is ``|f(t) - f(t - 1 week)| / (f(t - 1 week) + 1)``.
    The add-one smoothing keeps all-zero history finite.

    Parameters
    ----------
    series : HourlySeries
        Hourly counts of one node.
    buffer_days : int
        Days in the buffer.
    end : HourBucket, optional
        Reference boundary; defaults to the end of the series window.

    Returns
    -------
    WowBuffer

    Raises
    ------
    InsufficientHistory
        If fewer than ``buffer_days + 7`` days precede ``end``.
    """
    end_idx = series.num_hours if end is None else series.index_of(end)
    n_values = buffer_days * HOURS_PER_DAY
    needed = n_values + WEEK_HOURS
    if end_idx > series.num_hours or end_idx < needed:
        raise InsufficientHistory(
            f'Node {series.node_id} needs {needed // HOURS_PER_DAY} days '
            f'of history, has {max(min(end_idx, series.num_hours), 0) / 24:g}.',
            {'node_id': series.node_id, 'needed_hours': needed},
        )

    counts = series.counts
    current = counts[end_idx - n_values:end_idx]
    previous = counts[end_idx - n_values - WEEK_HOURS:end_idx - WEEK_HOURS]
    values = np.abs(current - previous) / (previous + 1)
    return WowBuffer(series.node_id, values.astype(np.float64))


def compute_tau(buffer: WowBuffer,
                sigma_multiplier: float = DEFAULT_SIGMA_MULTIPLIER
                ) -> UpperBoundRatio:
    """
    Upper bound ratio of a buffer: mean plus ``sigma_multiplier`` times
    the population standard deviation.

    Raises
    ------
    InsufficientHistory
        If the buffer is empty.
    """
    if not len(buffer):
        raise InsufficientHistory(
            f'Empty week-over-week buffer for node {buffer.node_id}.',
            {'node_id': buffer.node_id},
        )
    mean = float(np.mean(buffer.values))
    sigma = float(np.std(buffer.values))
    return UpperBoundRatio(tau=mean + sigma_multiplier * sigma,
                           mean=mean,
                           sigma=sigma,
                           sample_size=len(buffer))


def compute_upper_bounds(series: HourlySeries,
                         tau: Union[UpperBoundRatio, float],
                         target_week_start: HourBucket) -> ThresholdSet:
    """
    Upper-bound counts of the target week, seeded by the week before it.

    ``bound[i] = ceil((tau + 1) * (f(t_i) + 1) - 1)`` where ``t_i`` is
    hour ``i`` of the seed week; the bound applies to the same
    hour-of-week of the target week.

    Raises
    ------
    InsufficientHistory
        If the series does not hold the complete seed week.
    """
    if isinstance(tau, UpperBoundRatio):
        tau = tau.tau
    end_idx = series.index_of(target_week_start)
    start_idx = end_idx - WEEK_HOURS
    if start_idx < 0 or end_idx > series.num_hours:
        raise InsufficientHistory(
            f'Series of node {series.node_id} does not hold the full week '
            f'before {target_week_start}.',
            {'node_id': series.node_id},
        )
    seed = series.counts[start_idx:end_idx]
    bounds = np.ceil((tau + 1) * (seed + 1) - 1).astype(np.int64)
    return ThresholdSet(series.node_id, series.org_id, target_week_start,
                        bounds, ThresholdKind.INTERIM)


def node_thresholds(series: HourlySeries,
                    target_week_start: HourBucket,
                    config: BaselineConfig = BaselineConfig()
                    ) -> ThresholdSet:
    """
    Run the whole baseline for one node: buffer, ratio, bounds.
    """
    available = series.index_of(target_week_start)
    if target_week_start > series.window_end:
        available = -1
    if available < config.lookback_days * HOURS_PER_DAY:
        raise InsufficientHistory(
            f'Node {series.node_id} has {max(available, 0)} hours before '
            f'{target_week_start}, needs {config.lookback_days} days.',
            {'node_id': series.node_id},
        )
    buffer_end = target_week_start.shift(
        -config.buffer_offset_days * HOURS_PER_DAY
    )
    buffer = compute_wow_buffer(series, config.buffer_days, buffer_end)
    tau = compute_tau(buffer, config.sigma_multiplier)
    return compute_upper_bounds(series, tau, target_week_start)


def _try_node_thresholds(series: HourlySeries,
                         target_week_start: HourBucket,
                         config: BaselineConfig
                         ) -> Tuple[str, Optional[ThresholdSet], str]:
    try:
        return series.node_id, node_thresholds(
            series, target_week_start, config), ''
    except InsufficientHistory as e:
        return series.node_id, None, e.message


def generate_interim_thresholds(series_by_node: SeriesMap,
                                config: BaselineConfig = BaselineConfig(),
                                target_week_start: Optional[HourBucket] = None
                                ) -> ThresholdBatch:
    """
    Interim thresholds of every node for the week starting at
    ``target_week_start``.

    Nodes lacking history are listed in the batch's skip list
    instead of being dropped silently.

    Parameters
    ----------
    series_by_node : Dict[str, HourlySeries]
        Hourly series per node.
    config : BaselineConfig
        Baseline parameters.
    target_week_start : HourBucket, optional
        Defaults to the latest series window end.

    Returns
    -------
    ThresholdBatch
        Mapping node_id -> ThresholdSet in node id order, plus
        ``skipped``.
    """
    if target_week_start is None:
        if not series_by_node:
            raise InsufficientHistory('No series to derive a target week.')
        target_week_start = max(s.window_end for s in series_by_node.values())

    ordered = [series_by_node[n] for n in sorted(series_by_node)]
    results = get_executor().map(
        partial(_try_node_thresholds,
                target_week_start=target_week_start,
                config=config),
        ordered,
    )

    batch = ThresholdBatch(target_week_start)
    for node_id, thresholds, reason in results:
        if thresholds is None:
            batch.skipped.append(SkippedNode(node_id, reason))
        else:
            batch.thresholds[node_id] = thresholds

    logger.info('interim_thresholds target_week=%s nodes=%d skipped=%d',
                target_week_start, len(batch.thresholds), len(batch.skipped))
    if batch.skipped:
        logger.warning('skipped_nodes=%d first=%s', len(batch.skipped),
                       [s.node_id for s in batch.skipped[:5]])
    return batch
