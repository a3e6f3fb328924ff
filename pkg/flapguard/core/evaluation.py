import logging
from dataclasses import dataclass, field
from functools import partial
from typing import (
    Any,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import numpy as np

from flapguard._typing import SeriesMap
from flapguard.core.alerting import AlertRecord, apply_whitelist
from flapguard.core.ingest import HourBucket, HourlySeries
from flapguard.core.whitelist import (
    DEFAULT_CASE_WINDOW_HOURS,
    NodeAlertProfile,
    SupportCase,
    Whitelist,
    WhitelistCriteria,
    build_whitelist,
    in_case_window,
)
from flapguard.errors import ConfigError
from flapguard.executor.executor import get_executor
from flapguard.util.util import HOUR_SECONDS, WEEK_HOURS, format_timestamp

logger = logging.getLogger(__name__)

BUCKETS = ('0', '1-9', '10-99', '100-999', '>=1000')
_BUCKET_EDGES = np.array([1, 10, 100, 1000], dtype=np.float64)
DEFAULT_DISTANCE_BIN_HOURS = 24


def _ratio(numerator: int, denominator: int) -> Tuple[float, bool]:
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


@dataclass(frozen=True)
class ConfusionCounts:
    """
    Confusion matrix over labeled node-hours.
    """
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def metrics(self) -> Dict[str, Any]:
        """
        Precision, recall, TN rate and accuracy.

        A metric with a zero denominator is reported as 0 and its
        ``<name>_undefined`` flag is set.
        """
        values: Dict[str, Any] = {}
        for name, num, den in (
                ('precision', self.tp, self.tp + self.fp),
                ('recall', self.tp, self.tp + self.fn),
                ('tn_rate', self.tn, self.tn + self.fp),
                ('accuracy', self.tp + self.tn, self.total)):
            values[name], values[f'{name}_undefined'] = _ratio(num, den)
        return values

    def to_dict(self) -> Dict[str, Any]:
        return {'tp': self.tp, 'fp': self.fp, 'tn': self.tn, 'fn': self.fn,
                **self.metrics()}


@dataclass
class EventHistogram:
    """
    Node-hours bucketed by hourly event count, and nodes bucketed by
    their mean hourly count.
    """
    node_hours: Dict[str, int]
    nodes: Dict[str, int]

    @staticmethod
    def _fractions(counts: Mapping[str, int]) -> Dict[str, float]:
        total = sum(counts.values())
        return {b: (counts[b] / total if total else 0.0) for b in BUCKETS}

    def node_hour_fractions(self) -> Dict[str, float]:
        return self._fractions(self.node_hours)

    def node_fractions(self) -> Dict[str, float]:
        return self._fractions(self.nodes)

    def rows(self) -> List[Dict[str, Any]]:
        hour_fractions = self.node_hour_fractions()
        node_fractions = self.node_fractions()
        return [{
            'bucket': b,
            'node_hours': self.node_hours[b],
            'node_hours_fraction': hour_fractions[b],
            'nodes': self.nodes[b],
            'nodes_fraction': node_fractions[b],
        } for b in BUCKETS]


def bucket_index(values: np.ndarray) -> np.ndarray:
    """
    Histogram bucket of every value. Positive values below 1 (means)
    belong to the '1-9' bucket.
    """
    values = np.asarray(values, dtype=np.float64)
    idx = np.searchsorted(_BUCKET_EDGES, values, side='right')
    idx[(values > 0) & (idx == 0)] = 1
    return idx


def event_histogram(series_by_node: SeriesMap) -> EventHistogram:
    """
    Bucket every node-hour by its count and every node by its mean
    hourly count, over the buckets 0, 1-9, 10-99, 100-999 and >=1000.
    """
    hours = np.zeros(len(BUCKETS), dtype=np.int64)
    means = []
    for series in series_by_node.values():
        hours += np.bincount(bucket_index(series.counts),
                             minlength=len(BUCKETS))
        means.append(series.counts.mean() if series.num_hours else 0.0)
    nodes = np.bincount(bucket_index(np.asarray(means)),
                        minlength=len(BUCKETS))
    return EventHistogram(
        node_hours=dict(zip(BUCKETS, hours.tolist())),
        nodes=dict(zip(BUCKETS, nodes.tolist())),
    )


@dataclass
class NodeHourLabels:
    """
    Ground truth of every node-hour of an evaluation span.

    ``positives[node_id][i]`` is the label of hour
    ``window_starts[node_id] + i hours``. ``distance_histogram`` maps a
    signed distance bin (event hour minus opening of the nearest
    matching case, in ``bin_hours`` units) to the number of event hours.
    """
    window_hours: int
    bin_hours: int
    window_starts: Dict[str, HourBucket] = field(default_factory=dict)
    positives: Dict[str, np.ndarray] = field(default_factory=dict)
    distance_histogram: Dict[int, int] = field(default_factory=dict)
    event_hours: int = 0
    event_hours_in_window: int = 0

    @property
    def total(self) -> int:
        return sum(p.size for p in self.positives.values())

    @property
    def positive(self) -> int:
        return sum(int(p.sum()) for p in self.positives.values())

    def label_of(self, node_id: str, hour: HourBucket) -> bool:
        idx = self.window_starts[node_id].hours_until(hour)
        return bool(self.positives[node_id][idx])

    def event_hours_in_window_fraction(self) -> float:
        return _ratio(self.event_hours_in_window, self.event_hours)[0]

    def distance_rows(self) -> List[Dict[str, int]]:
        return [{'bin': b, 'bin_hours': self.bin_hours,
                 'event_hours': self.distance_histogram[b]}
                for b in sorted(self.distance_histogram)]


class _CaseIndex:
    """
    Opening instants of the cases matching each node, sorted, with the
    smallest case id per instant.
    """
    def __init__(self, cases: Iterable[SupportCase]) -> None:
        by_node: Dict[str, List[SupportCase]] = {}
        by_org: Dict[str, List[SupportCase]] = {}
        for case in cases:
            if case.node_id is not None:
                by_node.setdefault(case.node_id, []).append(case)
            else:
                by_org.setdefault(case.org_id, []).append(case)
        self._by_node = by_node
        self._by_org = by_org

    def matching(self, node_id: str,
                 org_id: str) -> Tuple[np.ndarray, np.ndarray]:
        cases = self._by_node.get(node_id, []) + self._by_org.get(org_id, [])
        if not cases:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype='U1')
        cases = sorted(cases, key=lambda c: (c.opened_at, c.case_id))
        opened = np.array([c.opened_at for c in cases], dtype=np.int64)
        ids = np.array([c.case_id for c in cases])
        opened, first = np.unique(opened, return_index=True)
        return opened, ids[first]


def _window_mask(hours: np.ndarray,
                 opened: np.ndarray,
                 window_hours: int) -> np.ndarray:
    # T - W <= h < T + W  <=>  h - W < T <= h + W
    window = window_hours * HOUR_SECONDS
    hi = np.searchsorted(opened, hours + window, side='right')
    lo = np.searchsorted(opened, hours - window, side='right')
    return hi > lo


def _nearest_distances(hours: np.ndarray,
                       opened: np.ndarray,
                       case_ids: np.ndarray) -> np.ndarray:
    """
    Signed distance (seconds) of every hour to its nearest case; ties
    go to the case with the smaller id.
    """
    idx = np.searchsorted(opened, hours, side='left')
    left = np.clip(idx - 1, 0, opened.size - 1)
    right = np.clip(idx, 0, opened.size - 1)
    d_left = hours - opened[left]
    d_right = hours - opened[right]
    use_right = np.abs(d_right) < np.abs(d_left)
    tie = np.abs(d_right) == np.abs(d_left)
    use_right |= tie & (case_ids[right] < case_ids[left])
    return np.where(use_right, d_right, d_left)


def _distance_bins(distances: np.ndarray, bin_hours: int) -> np.ndarray:
    d = distances / (bin_hours * HOUR_SECONDS)
    return (np.sign(d) * np.ceil(np.abs(d))).astype(np.int64)


def label_node_hours(cases: Iterable[SupportCase],
                     series_by_node: SeriesMap,
                     window_hours: int = DEFAULT_CASE_WINDOW_HOURS,
                     bin_hours: int = DEFAULT_DISTANCE_BIN_HOURS
                     ) -> NodeHourLabels:
    """
    Label every node-hour of the series against support cases.

    A node-hour is positive iff a matching case (same node for
    node-level cases, same organization otherwise) opened at ``T``
    with ``T - W <= hour < T + W``.

    Parameters
    ----------
    cases : Iterable[SupportCase]
        Support cases.
    series_by_node : Dict[str, HourlySeries]
        Evaluated node-hours.
    window_hours : int
        W, in hours.
    bin_hours : int
        Bin width of the temporal distance histogram.

    Returns
    -------
    NodeHourLabels
    """
    if window_hours <= 0:
        raise ConfigError('window_hours must be positive',
                          {'window_hours': window_hours})
    if bin_hours <= 0:
        raise ConfigError('bin_hours must be positive',
                          {'bin_hours': bin_hours})
    index = _CaseIndex(cases)
    labels = NodeHourLabels(window_hours, bin_hours)
    distance_bins = []

    for node_id in sorted(series_by_node):
        series = series_by_node[node_id]
        hours = series.window_start.start + \
            np.arange(series.num_hours, dtype=np.int64) * HOUR_SECONDS
        opened, case_ids = index.matching(node_id, series.org_id)
        labels.window_starts[node_id] = series.window_start
        is_event = series.counts > 0
        labels.event_hours += int(is_event.sum())
        if not opened.size:
            labels.positives[node_id] = np.zeros(series.num_hours, dtype=bool)
            continue

        positives = _window_mask(hours, opened, window_hours)
        labels.positives[node_id] = positives
        labels.event_hours_in_window += int((positives & is_event).sum())
        event_hours = hours[is_event]
        if event_hours.size:
            distance_bins.append(_distance_bins(
                _nearest_distances(event_hours, opened, case_ids), bin_hours
            ))

    if distance_bins:
        bins, counts = np.unique(np.concatenate(distance_bins),
                                 return_counts=True)
        labels.distance_histogram = dict(zip(bins.tolist(), counts.tolist()))
    logger.info('labels node_hours=%d positive=%d event_hours_in_window=%d',
                labels.total, labels.positive, labels.event_hours_in_window)
    return labels


def _alert_masks(labels: NodeHourLabels,
                 alerts: Iterable[AlertRecord]) -> Dict[str, np.ndarray]:
    masks = {n: np.zeros(p.size, dtype=bool)
             for n, p in labels.positives.items()}
    ignored = 0
    for alert in alerts:
        if alert.suppressed:
            continue
        mask = masks.get(alert.node_id)
        if mask is None:
            ignored += 1
            continue
        idx = labels.window_starts[alert.node_id].hours_until(alert.hour)
        if 0 <= idx < mask.size:
            mask[idx] = True
        else:
            ignored += 1
    if ignored:
        logger.info('alerts outside labeled node-hours=%d', ignored)
    return masks


def _confusion(positives: np.ndarray, alerted: np.ndarray) -> ConfusionCounts:
    return ConfusionCounts(
        tp=int((alerted & positives).sum()),
        fp=int((alerted & ~positives).sum()),
        tn=int((~alerted & ~positives).sum()),
        fn=int((~alerted & positives).sum()),
    )


def confusion(labels: NodeHourLabels,
              alerts: Iterable[AlertRecord]) -> ConfusionCounts:
    """
    Confusion counts of unsuppressed alerts against labels.
    Alerts of unlabeled node-hours are ignored.
    """
    masks = _alert_masks(labels, alerts)
    total = ConfusionCounts()
    for node_id, positives in labels.positives.items():
        total += _confusion(positives, masks[node_id])
    return total


def weekly_confusion(labels: NodeHourLabels,
                     alerts: Iterable[AlertRecord],
                     week_starts: Sequence[HourBucket]
                     ) -> Dict[HourBucket, ConfusionCounts]:
    """
    Confusion counts restricted to each week.
    """
    masks = _alert_masks(labels, alerts)
    weekly = {w: ConfusionCounts() for w in week_starts}
    for node_id, positives in labels.positives.items():
        start = labels.window_starts[node_id]
        for week_start in week_starts:
            offset = start.hours_until(week_start)
            first = min(max(offset, 0), positives.size)
            last = min(max(offset + WEEK_HOURS, 0), positives.size)
            weekly[week_start] += _confusion(positives[first:last],
                                             masks[node_id][first:last])
    return weekly


@dataclass(frozen=True)
class CaseCoverageRow:
    case_id: str
    org_id: str
    node_id: Optional[str]
    opened_at: int
    alerts_in_window: int

    @property
    def covered(self) -> bool:
        return self.alerts_in_window > 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'case_id': self.case_id,
            'org_id': self.org_id,
            'node_id': self.node_id or '',
            'opened_at': format_timestamp(self.opened_at),
            'alerts_in_window': self.alerts_in_window,
            'covered': self.covered,
        }


@dataclass
class CaseCoverage:
    fraction: float
    rows: List[CaseCoverageRow]


def case_coverage(cases: Iterable[SupportCase],
                  alerts: Iterable[AlertRecord],
                  window_hours: int = DEFAULT_CASE_WINDOW_HOURS
                  ) -> CaseCoverage:
    """
    Fraction of cases with at least one unsuppressed matching alert
    inside their window. An empty case list has coverage 0.
    """
    if window_hours <= 0:
        raise ConfigError('window_hours must be positive',
                          {'window_hours': window_hours})
    by_node: Dict[str, List[int]] = {}
    by_org: Dict[str, List[int]] = {}
    for alert in alerts:
        if not alert.suppressed:
            by_node.setdefault(alert.node_id, []).append(alert.hour.start)
            by_org.setdefault(alert.org_id, []).append(alert.hour.start)
    by_node_arr = {k: np.asarray(v, dtype=np.int64) for k, v in by_node.items()}
    by_org_arr = {k: np.asarray(v, dtype=np.int64) for k, v in by_org.items()}

    rows = []
    empty = np.empty(0, dtype=np.int64)
    for case in cases:
        if case.node_id is not None:
            hours = by_node_arr.get(case.node_id, empty)
        else:
            hours = by_org_arr.get(case.org_id, empty)
        n = int(in_case_window(hours, case.opened_at, window_hours).sum())
        rows.append(CaseCoverageRow(case.case_id, case.org_id, case.node_id,
                                    case.opened_at, n))
    covered = sum(1 for r in rows if r.covered)
    return CaseCoverage(_ratio(covered, len(rows))[0], rows)


def retention(weekly_alerted_nodes: Sequence[Set[str]]
              ) -> List[Optional[float]]:
    """
    Per week, the fraction of alerted nodes that were also alerted the
    week before. The first week has no value; a week without alerted
    nodes has retention 0.
    """
    values: List[Optional[float]] = []
    previous: Optional[Set[str]] = None
    for alerted in weekly_alerted_nodes:
        if previous is None:
            values.append(None)
        else:
            values.append(_ratio(len(alerted & previous), len(alerted))[0])
        previous = alerted
    return values


def weekly_alerted_nodes(alerts: Iterable[AlertRecord],
                         week_starts: Sequence[HourBucket]
                         ) -> List[Set[str]]:
    weeks: List[Set[str]] = [set() for _ in week_starts]
    starts = np.array([w.start for w in week_starts], dtype=np.int64)
    for alert in alerts:
        if alert.suppressed:
            continue
        i = int(np.searchsorted(starts, alert.hour.start, side='right')) - 1
        if i >= 0 and week_starts[i].hours_until(alert.hour) < WEEK_HOURS:
            weeks[i].add(alert.node_id)
    return weeks


@dataclass(frozen=True)
class GroupRatio:
    """
    Alerted share of the node-hours and nodes of a group.
    """
    nodes: int
    alerted_nodes: int
    hours: int
    alerted_hours: int

    @property
    def nodes_ratio(self) -> float:
        return _ratio(self.alerted_nodes, self.nodes)[0]

    @property
    def hours_ratio(self) -> float:
        return _ratio(self.alerted_hours, self.hours)[0]

    def to_dict(self) -> Dict[str, Any]:
        return {'nodes': self.nodes, 'alerted_nodes': self.alerted_nodes,
                'hours': self.hours, 'alerted_hours': self.alerted_hours,
                'nodes_ratio': self.nodes_ratio,
                'hours_ratio': self.hours_ratio}


@dataclass
class RatioReport:
    """
    Alert ratios of nodes by event volume bucket, of organizations
    and of weeks.
    """
    by_bucket: Dict[str, GroupRatio]
    by_org: Dict[str, GroupRatio]
    by_week: Dict[HourBucket, GroupRatio]
    case_alert_coverage: float
    org_alert_ratio: float

    def bucket_rows(self) -> List[Dict[str, Any]]:
        return [{'bucket': b, **r.to_dict()} for b, r in self.by_bucket.items()]

    def org_rows(self) -> List[Dict[str, Any]]:
        return [{'org_id': o, **r.to_dict()} for o, r in self.by_org.items()]


def _group_ratio(members: List[Tuple[int, int]]) -> GroupRatio:
    return GroupRatio(
        nodes=len(members),
        alerted_nodes=sum(1 for _, a in members if a > 0),
        hours=sum(h for h, _ in members),
        alerted_hours=sum(a for _, a in members),
    )


def alert_ratios(series_by_node: SeriesMap,
                 alerts: Iterable[AlertRecord],
                 cases: Iterable[SupportCase],
                 week_starts: Sequence[HourBucket],
                 window_hours: int = DEFAULT_CASE_WINDOW_HOURS
                 ) -> RatioReport:
    """
    Alert ratios over the evaluated series.

    ``hours_ratio`` is alerted node-hours over node-hours of a group and
    ``nodes_ratio`` alerted nodes over nodes. Nodes are bucketed by mean
    hourly event count.
    """
    alerts = [a for a in alerts if not a.suppressed]
    alerted_hours: Dict[str, Set[int]] = {}
    for alert in alerts:
        alerted_hours.setdefault(alert.node_id, set()).add(alert.hour.start)

    node_ids = sorted(series_by_node)
    means = np.asarray([series_by_node[n].counts.mean()
                        if series_by_node[n].num_hours else 0.0
                        for n in node_ids])
    buckets = bucket_index(means) if node_ids else np.empty(0, dtype=int)

    by_bucket: Dict[str, List[Tuple[int, int]]] = {b: [] for b in BUCKETS}
    by_org: Dict[str, List[Tuple[int, int]]] = {}
    by_week: Dict[HourBucket, List[Tuple[int, int]]] = \
        {w: [] for w in week_starts}
    for node_id, bucket in zip(node_ids, buckets.tolist()):
        series = series_by_node[node_id]
        hours = alerted_hours.get(node_id, set())
        member = (series.num_hours, len(hours))
        by_bucket[BUCKETS[bucket]].append(member)
        by_org.setdefault(series.org_id, []).append(member)
        for week_start in week_starts:
            lo, hi = week_start.start, week_start.shift(WEEK_HOURS).start
            first = max(lo, series.window_start.start)
            last = min(hi, series.window_end.start)
            n_hours = max(last - first, 0) // HOUR_SECONDS
            by_week[week_start].append(
                (n_hours, sum(1 for h in hours if lo <= h < hi))
            )

    org_ratios = {o: _group_ratio(by_org[o]) for o in sorted(by_org)}
    alerted_orgs = sum(1 for r in org_ratios.values() if r.alerted_nodes)
    return RatioReport(
        by_bucket={b: _group_ratio(m) for b, m in by_bucket.items()},
        by_org=org_ratios,
        by_week={w: _group_ratio(m) for w, m in by_week.items()},
        case_alert_coverage=case_coverage(cases, alerts, window_hours).fraction,
        org_alert_ratio=_ratio(alerted_orgs, len(org_ratios))[0],
    )


@dataclass(frozen=True)
class GridPoint:
    min_weeks: int
    max_change: float
    whitelist_size: int
    org_alert_ratio: float
    case_coverage: float
    alerted_nodes: int
    alerts: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'min_weeks': self.min_weeks,
            'max_change': self.max_change,
            'org_alert_ratio': self.org_alert_ratio,
            'case_coverage': self.case_coverage,
            'whitelist_size': self.whitelist_size,
            'alerted_nodes': self.alerted_nodes,
            'alerts': self.alerts,
        }


def _grid_point(point: Tuple[int, float],
                profiles: Mapping[str, NodeAlertProfile],
                case_links: Mapping[str, bool],
                alerts: Sequence[AlertRecord],
                cases: Sequence[SupportCase],
                org_ids: Mapping[str, str],
                window_hours: int,
                weeks_tested: int) -> GridPoint:
    min_weeks, max_change = point
    criteria = WhitelistCriteria(
        min_weeks_alerted_fraction=min_weeks / weeks_tested,
        max_avg_abs_wow_alert_change=max_change,
        case_window_hours=window_hours,
    )
    whitelist = build_whitelist(profiles, case_links, criteria)
    active = [a for a in apply_whitelist(alerts, whitelist)
              if not a.suppressed]
    orgs = set(org_ids.values())
    alerted_orgs = {a.org_id for a in active}
    return GridPoint(
        min_weeks=min_weeks,
        max_change=max_change,
        whitelist_size=len(whitelist),
        org_alert_ratio=_ratio(len(alerted_orgs & orgs), len(orgs))[0],
        case_coverage=case_coverage(cases, active, window_hours).fraction,
        alerted_nodes=len({a.node_id for a in active}),
        alerts=len(active),
    )


def grid_search(profiles: Mapping[str, NodeAlertProfile],
                case_links: Mapping[str, bool],
                weeks_grid: Iterable[int],
                change_grid: Iterable[float],
                alerts: Sequence[AlertRecord],
                cases: Sequence[SupportCase],
                org_ids: Mapping[str, str],
                window_hours: int = DEFAULT_CASE_WINDOW_HOURS
                ) -> List[GridPoint]:
    """
    Evaluate the whitelist at every (min_weeks, max_change) point.

    ``min_weeks`` is the number of backtest weeks a node must alert in
    strictly more than, so it maps to the fraction
    ``min_weeks / weeks_tested``. Every point applies its whitelist to
    the interim alerts, which is equivalent to detecting against its
    finalized thresholds.

    Parameters
    ----------
    profiles : Mapping[str, NodeAlertProfile]
        Backtest profiles, all with the same ``weeks_tested``.
    case_links : Mapping[str, bool]
        Case links of the profiled nodes.
    weeks_grid : Iterable[int]
        Values of min_weeks, in [1, weeks_tested].
    change_grid : Iterable[float]
        Values of the maximum average week-over-week alert change.
    alerts : Sequence[AlertRecord]
        Interim alerts of the evaluated weeks.
    cases : Sequence[SupportCase]
        Support cases.
    org_ids : Mapping[str, str]
        node_id -> org_id of every evaluated node, alerted or not.
    window_hours : int
        Case window half-width.

    Returns
    -------
    List[GridPoint]
        Rows ordered by (min_weeks, max_change).
    """
    weeks_grid = sorted(set(int(w) for w in weeks_grid))
    change_grid = sorted(set(float(c) for c in change_grid))
    if not weeks_grid or not change_grid:
        raise ConfigError('grid_search needs non-empty grids')
    tested = {p.weeks_tested for p in profiles.values()}
    if len(tested) > 1:
        raise ConfigError('Profiles differ in weeks_tested',
                          {'weeks_tested': sorted(tested)})
    weeks_tested = tested.pop() if tested else max(weeks_grid)
    bad = [w for w in weeks_grid if not 1 <= w <= weeks_tested]
    if bad:
        raise ConfigError(f'min_weeks must be in [1, {weeks_tested}]',
                          {'min_weeks': bad})

    points = [(w, c) for w in weeks_grid for c in change_grid]
    rows = get_executor().map(
        partial(_grid_point, profiles=profiles, case_links=case_links,
                alerts=list(alerts), cases=list(cases), org_ids=org_ids,
                window_hours=window_hours, weeks_tested=weeks_tested),
        points,
    )
    logger.info('grid_search points=%d', len(rows))
    return rows


@dataclass
class EvaluationReport:
    """
    Everything computed by :func:`evaluate`.
    """
    week_starts: List[HourBucket]
    histogram: EventHistogram
    labels: NodeHourLabels
    confusion: ConfusionCounts
    weekly_confusion: Dict[HourBucket, ConfusionCounts]
    retention: List[Optional[float]]
    ratios: RatioReport
    coverage: CaseCoverage
    whitelist_size: int = 0

    def weekly_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for week_start, ret in zip(self.week_starts, self.retention):
            counts = self.weekly_confusion[week_start]
            ratio = self.ratios.by_week[week_start]
            rows.append({
                'week_start': week_start.isoformat(),
                **counts.to_dict(),
                'alerted_nodes': ratio.alerted_nodes,
                'nodes_ratio': ratio.nodes_ratio,
                'hours_ratio': ratio.hours_ratio,
                'retention': ret,
            })
        return rows

    def summary(self) -> Dict[str, Any]:
        """
        Headline metrics as a JSON-compatible dict.
        """
        return {
            'weeks': [w.isoformat() for w in self.week_starts],
            'nodes': len(self.labels.positives),
            'node_hours': self.labels.total,
            'positive_node_hours': self.labels.positive,
            'event_hours_in_case_window_fraction':
                self.labels.event_hours_in_window_fraction(),
            'histogram': {
                'node_hours': self.histogram.node_hour_fractions(),
                'nodes': self.histogram.node_fractions(),
            },
            'confusion': self.confusion.to_dict(),
            'case_coverage': self.coverage.fraction,
            'cases': len(self.coverage.rows),
            'org_alert_ratio': self.ratios.org_alert_ratio,
            'retention': self.retention,
            'whitelist_size': self.whitelist_size,
        }


def evaluate(series_by_node: SeriesMap,
             alerts: Iterable[AlertRecord],
             cases: Sequence[SupportCase],
             week_starts: Sequence[HourBucket],
             window_hours: int = DEFAULT_CASE_WINDOW_HOURS,
             whitelist: Optional[Whitelist] = None,
             bin_hours: int = DEFAULT_DISTANCE_BIN_HOURS
             ) -> EvaluationReport:
    """
    Evaluate alerts of consecutive weeks against support cases.

    The series are clipped to the evaluated weeks. When a whitelist is
    given, alerts of its nodes are suppressed first.

    Raises
    ------
    WindowMismatch
        If a series does not cover the evaluated weeks.
    """
    week_starts = sorted(week_starts)
    if not week_starts:
        raise ConfigError('evaluate needs at least one week')
    start, end = week_starts[0], week_starts[-1].shift(WEEK_HOURS)
    clipped: Dict[str, HourlySeries] = {
        n: series_by_node[n].slice(start, end) for n in sorted(series_by_node)
    }
    alerts = list(alerts)
    if whitelist is not None:
        alerts = apply_whitelist(alerts, whitelist)
    alerts = [a for a in alerts if start <= a.hour < end]

    labels = label_node_hours(cases, clipped, window_hours, bin_hours)
    report = EvaluationReport(
        week_starts=week_starts,
        histogram=event_histogram(clipped),
        labels=labels,
        confusion=confusion(labels, alerts),
        weekly_confusion=weekly_confusion(labels, alerts, week_starts),
        retention=retention(weekly_alerted_nodes(alerts, week_starts)),
        ratios=alert_ratios(clipped, alerts, cases, week_starts, window_hours),
        coverage=case_coverage(cases, alerts, window_hours),
        whitelist_size=len(whitelist) if whitelist is not None else 0,
    )
    logger.info('evaluate weeks=%d confusion=%s', len(week_starts),
                report.confusion)
    return report
