import logging
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from flapguard._typing import SeriesMap, ThresholdMap, WeeklyAlerts
from flapguard.core.alerting import AlertRecord, exceedances
from flapguard.core.baseline import (
    BaselineConfig,
    SkippedNode,
    ThresholdKind,
    ThresholdSet,
    node_thresholds,
)
from flapguard.core.ingest import HourBucket, HourlySeries
from flapguard.errors import (
    ConfigError,
    FlapguardError,
    RaggedInput,
)
from flapguard.executor.executor import get_executor
from flapguard.util.util import (
    HOUR_SECONDS,
    WEEK_HOURS,
    parse_timestamp,
)

logger = logging.getLogger(__name__)

DEFAULT_BACKTEST_WEEKS = 5
DEFAULT_CASE_WINDOW_HOURS = 720


@dataclass(frozen=True)
class NodeAlertProfile:
    """
    Backtest summary of one node.

    ``avg_abs_wow_alert_change`` is the mean, over consecutive week pairs,
    of ``|a_w - a_(w-1)| / (a_(w-1) + 1) * 100`` (percent).
    """
    node_id: str
    org_id: str
    weeks_tested: int
    weeks_alerted: int
    weekly_alert_counts: Tuple[int, ...]
    avg_abs_wow_alert_change: float

    @property
    def alerted_fraction(self) -> float:
        return self.weeks_alerted / self.weeks_tested


@dataclass(frozen=True)
class SupportCase:
    """
    Customer support case. Cases without ``node_id`` match every node
    of their organization.
    """
    case_id: str
    org_id: str
    node_id: Optional[str]
    opened_at: int

    def __post_init__(self) -> None:
        if not self.org_id:
            raise ValueError(f'Case {self.case_id} has an empty org_id')
        object.__setattr__(self, 'node_id', self.node_id or None)

    @classmethod
    def from_dict(cls, row: Mapping[str, Any]) -> 'SupportCase':
        return cls(str(row['case_id']), str(row.get('org_id') or ''),
                   row.get('node_id') or None,
                   parse_timestamp(row['opened_at']))

    def matches(self, node_id: str, org_id: str) -> bool:
        if self.node_id is not None:
            return self.node_id == node_id
        return self.org_id == org_id


@dataclass(frozen=True)
class WhitelistCriteria:
    """
    Whitelist thresholds.

    A node is whitelisted when it alerted in more than
    ``min_weeks_alerted_fraction`` of the backtested weeks, its average
    absolute week-over-week change of alert counts is below
    ``max_avg_abs_wow_alert_change`` percent, and no support case
    opened within ``case_window_hours`` of any of its alerts.
    """
    min_weeks_alerted_fraction: float = 0.5
    max_avg_abs_wow_alert_change: float = 10.0
    case_window_hours: int = DEFAULT_CASE_WINDOW_HOURS

    def __post_init__(self) -> None:
        if not 0 < self.min_weeks_alerted_fraction <= 1:
            raise ConfigError(
                'min_weeks_alerted_fraction must be in (0, 1]',
                {'min_weeks_alerted_fraction':
                 self.min_weeks_alerted_fraction},
            )
        if self.max_avg_abs_wow_alert_change < 0:
            raise ConfigError(
                'max_avg_abs_wow_alert_change must be non-negative',
                {'max_avg_abs_wow_alert_change':
                 self.max_avg_abs_wow_alert_change},
            )
        if self.case_window_hours <= 0:
            raise ConfigError('case_window_hours must be positive',
                              {'case_window_hours': self.case_window_hours})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Whitelist:
    """
    Nodes exempted from alerting, with the criteria that produced them.
    """
    node_ids: FrozenSet[str]
    criteria: WhitelistCriteria
    generated_at: int

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.node_ids

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.node_ids))

    def __len__(self) -> int:
        return len(self.node_ids)

    @classmethod
    def empty(cls,
              criteria: WhitelistCriteria = WhitelistCriteria(),
              generated_at: int = 0) -> 'Whitelist':
        return cls(frozenset(), criteria, generated_at)


@dataclass(frozen=True)
class CaseJoin:
    """
    Result of joining profiles with support cases: per-node case link and
    the cases that linked to no node.
    """
    links: Dict[str, bool]
    unmatched: List[SupportCase]


@dataclass
class BacktestResult:
    """
    Replay of the weeks before a target week against their own interim
    thresholds.
    """
    target_week_start: HourBucket
    week_starts: List[HourBucket]
    org_ids: Dict[str, str] = field(default_factory=dict)
    weekly_alerts: WeeklyAlerts = field(default_factory=dict)
    alerts: List[AlertRecord] = field(default_factory=list)
    skipped: List[SkippedNode] = field(default_factory=list)

    @property
    def weeks(self) -> int:
        return len(self.week_starts)

    def alerts_by_node(self) -> Dict[str, np.ndarray]:
        return alert_hours_by_node(self.alerts)


def in_case_window(hours: Union[np.ndarray, int],
                   opened_at: int,
                   window_hours: int) -> Union[np.ndarray, bool]:
    """
    Half-open case window test: ``opened_at - W <= hour < opened_at + W``.
    """
    window = window_hours * HOUR_SECONDS
    return (hours >= opened_at - window) & (hours < opened_at + window)


def backtest_week(series: HourlySeries, thresholds: ThresholdSet) -> int:
    """
    Number of hours of the thresholds' target week whose observed count
    strictly exceeds the bound.

    Raises
    ------
    WindowMismatch
        If the series does not cover the target week.
    """
    return int(exceedances(series, thresholds).size)


def _backtest_node(series: HourlySeries,
                   week_starts: Sequence[HourBucket],
                   config: BaselineConfig
                   ) -> Tuple[str, Optional[List[int]],
                              List[AlertRecord], str]:
    weekly: List[int] = []
    alerts: List[AlertRecord] = []
    try:
        for week_start in week_starts:
            thresholds = node_thresholds(series, week_start, config)
            hours = exceedances(series, thresholds)
            weekly.append(int(hours.size))
            first = series.index_of(week_start)
            for idx in hours.tolist():
                alerts.append(AlertRecord(
                    series.node_id, series.org_id, week_start.shift(idx),
                    int(series.counts[first + idx]),
                    int(thresholds.bounds[idx]),
                ))
    except FlapguardError as e:
        return series.node_id, None, [], e.message
    return series.node_id, weekly, alerts, ''


def backtest_week_starts(target_week_start: HourBucket,
                         weeks: int) -> List[HourBucket]:
    return [target_week_start.shift(-(weeks - i) * WEEK_HOURS)
            for i in range(weeks)]


def run_backtest(series_by_node: SeriesMap,
                 target_week_start: HourBucket,
                 weeks: int = DEFAULT_BACKTEST_WEEKS,
                 config: BaselineConfig = BaselineConfig()
                 ) -> BacktestResult:
    """
    Backtest the ``weeks`` weeks before ``target_week_start``.

    Every backtest week is scored against interim thresholds generated
    from the history before that week. Nodes that cannot be scored in
    every week are skipped, so all profiles share ``weeks_tested``.

    Parameters
    ----------
    series_by_node : Dict[str, HourlySeries]
        Series covering the lookback before the first backtest week and
        every backtest week.
    target_week_start : HourBucket
        Start of the week the whitelist is built for.
    weeks : int
        Number of backtest weeks (k).
    config : BaselineConfig
        Baseline parameters.

    Returns
    -------
    BacktestResult
    """
    if weeks <= 0:
        raise ConfigError('backtest weeks must be positive',
                          {'weeks': weeks})
    week_starts = backtest_week_starts(target_week_start, weeks)
    ordered = [series_by_node[n] for n in sorted(series_by_node)]
    results = get_executor().map(
        partial(_backtest_node, week_starts=week_starts, config=config),
        ordered,
    )

    result = BacktestResult(target_week_start, week_starts)
    for series, (node_id, weekly, alerts, reason) in zip(ordered, results):
        if weekly is None:
            result.skipped.append(SkippedNode(node_id, reason))
            continue
        result.org_ids[node_id] = series.org_id
        result.weekly_alerts[node_id] = weekly
        result.alerts.extend(alerts)

    logger.info('backtest target_week=%s weeks=%d nodes=%d alerts=%d '
                'skipped=%d', target_week_start, weeks,
                len(result.weekly_alerts), len(result.alerts),
                len(result.skipped))
    return result


def _avg_abs_wow_change(counts: Sequence[int]) -> float:
    if len(counts) < 2:
        return 0.0
    previous = np.asarray(counts[:-1], dtype=np.float64)
    current = np.asarray(counts[1:], dtype=np.float64)
    return float(np.mean(np.abs(current - previous) / (previous + 1)) * 100)


def build_profiles(weekly_alerts: Mapping[str, Sequence[int]],
                   org_ids: Optional[Mapping[str, str]] = None
                   ) -> Dict[str, NodeAlertProfile]:
    """
    Alerting profile of every node from its weekly alert counts.

    Parameters
    ----------
    weekly_alerts : Mapping[str, Sequence[int]]
        node_id -> alert count per backtest week, oldest first.
    org_ids : Mapping[str, str], optional
        node_id -> org_id.

    Returns
    -------
    Dict[str, NodeAlertProfile]
        Profiles in node id order.

    Raises
    ------
    RaggedInput
        If the nodes do not share the same number of weeks.
    """
    lengths = {len(v) for v in weekly_alerts.values()}
    if len(lengths) > 1 or 0 in lengths:
        raise RaggedInput(
            f'Weekly alert sequences have lengths {sorted(lengths)}; '
            'expected one common positive length.',
            {'lengths': sorted(lengths)},
        )
    org_ids = org_ids or {}

    profiles: Dict[str, NodeAlertProfile] = {}
    for node_id in sorted(weekly_alerts):
        counts = tuple(int(c) for c in weekly_alerts[node_id])
        profiles[node_id] = NodeAlertProfile(
            node_id=node_id,
            org_id=org_ids.get(node_id, ''),
            weeks_tested=len(counts),
            weeks_alerted=sum(1 for c in counts if c > 0),
            weekly_alert_counts=counts,
            avg_abs_wow_alert_change=_avg_abs_wow_change(counts),
        )
    return profiles


def alert_hours_by_node(
        alerts: Iterable[Union[AlertRecord, Tuple[str, int]]]
) -> Dict[str, np.ndarray]:
    """
    Sorted alert hour starts (epoch seconds) per node.
    """
    hours: Dict[str, List[int]] = {}
    for alert in alerts:
        if isinstance(alert, AlertRecord):
            node_id, hour = alert.node_id, alert.hour.start
        else:
            node_id, hour = alert[0], int(alert[1])
        hours.setdefault(node_id, []).append(hour)
    return {n: np.sort(np.asarray(h, dtype=np.int64))
            for n, h in hours.items()}


def _has_hour_in_window(hours: Optional[np.ndarray],
                        opened_at: int,
                        window_hours: int) -> bool:
    if hours is None or not hours.size:
        return False
    lo = opened_at - window_hours * HOUR_SECONDS
    i = int(np.searchsorted(hours, lo, side='left'))
    return i < hours.size and bool(in_case_window(int(hours[i]), opened_at,
                                                  window_hours))


def nodes_by_org(org_ids: Mapping[str, str]) -> Dict[str, List[str]]:
    by_org: Dict[str, List[str]] = {}
    for node_id in sorted(org_ids):
        by_org.setdefault(org_ids[node_id], []).append(node_id)
    return by_org


def join_cases(profiles: Mapping[str, NodeAlertProfile],
               cases: Iterable[SupportCase],
               alerts_by_node: Mapping[str, Any],
               window_hours: int = DEFAULT_CASE_WINDOW_HOURS) -> CaseJoin:
    """
    Link nodes to support cases.

    A node is case-linked if a case matching it (by node id when the
    case names a node, otherwise by organization) opened within
    ``window_hours`` of any of its alerted hours.

    Parameters
    ----------
    profiles : Mapping[str, NodeAlertProfile]
        Profiles of the backtested nodes.
    cases : Iterable[SupportCase]
        Support cases.
    alerts_by_node : Mapping[str, array-like]
        node_id -> alert hour starts (epoch seconds or HourBuckets).
    window_hours : int
        Half-width of the case window.

    Returns
    -------
    CaseJoin
    """
    if window_hours <= 0:
        raise ConfigError('window_hours must be positive',
                          {'window_hours': window_hours})
    hours = {n: _as_hour_array(h) for n, h in alerts_by_node.items()}
    by_org = nodes_by_org({n: p.org_id for n, p in profiles.items()})

    links = {node_id: False for node_id in sorted(profiles)}
    unmatched: List[SupportCase] = []
    for case in cases:
        if case.node_id is not None:
            candidates = [case.node_id] if case.node_id in profiles else []
        else:
            candidates = by_org.get(case.org_id, [])
        linked = False
        for node_id in candidates:
            if _has_hour_in_window(hours.get(node_id), case.opened_at,
                                   window_hours):
                links[node_id] = True
                linked = True
        if not linked:
            unmatched.append(case)

    if unmatched:
        logger.info('unmatched_cases=%d', len(unmatched))
    return CaseJoin(links, unmatched)


def _as_hour_array(hours: Any) -> np.ndarray:
    values = [h.start if isinstance(h, HourBucket) else int(h)
              for h in (hours.tolist() if isinstance(hours, np.ndarray)
                        else hours)]
    return np.sort(np.asarray(values, dtype=np.int64))


def is_whitelisted(profile: NodeAlertProfile,
                   case_linked: bool,
                   criteria: WhitelistCriteria) -> bool:
    return (profile.alerted_fraction > criteria.min_weeks_alerted_fraction
            and profile.avg_abs_wow_alert_change
            < criteria.max_avg_abs_wow_alert_change
            and not case_linked)


def build_whitelist(profiles: Mapping[str, NodeAlertProfile],
                    case_links: Mapping[str, bool],
                    criteria: WhitelistCriteria = WhitelistCriteria(),
                    generated_at: int = 0) -> Whitelist:
    """
    Whitelist the persistently and stably alerted nodes that have no
    linked support case.

    Parameters
    ----------
    profiles : Mapping[str, NodeAlertProfile]
        Backtest profiles.
    case_links : Mapping[str, bool]
        node_id -> case-linked, as returned by :func:`join_cases`.
    criteria : WhitelistCriteria
        Thresholds.
    generated_at : int
        As-of instant recorded in the whitelist (epoch seconds).

    Returns
    -------
    Whitelist
    """
    node_ids = frozenset(
        node_id for node_id, profile in profiles.items()
        if is_whitelisted(profile, case_links.get(node_id, False), criteria)
    )
    logger.info('whitelist size=%d of nodes=%d criteria=%s',
                len(node_ids), len(profiles), criteria.to_dict())
    return Whitelist(node_ids, criteria, generated_at)


PROFILE_COLUMNS = ('node_id', 'org_id', 'weeks_alerted', 'weeks_tested',
                   'avg_abs_wow_alert_change', 'mean_weekly_alerts',
                   'case_linked', 'whitelisted')


def profile_rows(profiles: Mapping[str, NodeAlertProfile],
                 case_links: Mapping[str, bool],
                 whitelist: Whitelist) -> List[Dict[str, Any]]:
    """
    One report row per profiled node, in node id order, with its case
    link and whitelist decision.
    """
    rows = []
    for node_id in sorted(profiles):
        profile = profiles[node_id]
        weekly = profile.weekly_alert_counts
        rows.append({
            'node_id': node_id,
            'org_id': profile.org_id,
            'weeks_alerted': profile.weeks_alerted,
            'weeks_tested': profile.weeks_tested,
            'avg_abs_wow_alert_change': profile.avg_abs_wow_alert_change,
            'mean_weekly_alerts': sum(weekly) / len(weekly) if weekly
            else 0.0,
            'case_linked': bool(case_links.get(node_id, False)),
            'whitelisted': node_id in whitelist,
        })
    return rows


def finalize_thresholds(interim: Mapping[str, ThresholdSet],
                        whitelist: Whitelist) -> ThresholdMap:
    """
    Final thresholds: every node passes through with ``kind=final``;
    whitelisted nodes are marked exempt and keep their interim bounds.
    """
    return {
        node_id: interim[node_id].replace(
            kind=ThresholdKind.FINAL, exempt=node_id in whitelist
        )
        for node_id in sorted(interim)
    }

