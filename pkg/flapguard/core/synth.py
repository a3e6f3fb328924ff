"""
Deterministic synthetic fleets.

A fleet mixes four populations of nodes:

- silent nodes, listed in the roster only,
- low-volume nodes with sparse Poisson counts,
- stable flappers, with a constant base level and a fixed number of
  weekly spikes at hour-of-week positions that move every week, so they
  alert by the same amount each week; they live in dedicated roaming
  organizations together with silent nodes and never get support cases,
- incident nodes, with a flat base level, one multi-hour burst inside the
  backtest span and one node-level support case opened within 72 hours
  after the burst.

All randomness comes from one ``numpy.random.default_rng(seed)``.
"""
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from flapguard.arrow.event_table import EventTable
from flapguard.core.ingest import HourBucket
from flapguard.core.whitelist import DEFAULT_BACKTEST_WEEKS, SupportCase
from flapguard.errors import ConfigError
from flapguard.util.util import (
    HOUR_SECONDS,
    WEEK_HOURS,
    format_timestamp,
)

logger = logging.getLogger(__name__)

FLAPPER_SPIKES_PER_WEEK = 2
FLAPPER_SPIKE_STEP_HOURS = 37
FLAPPERS_PER_ORG = 3
INCIDENT_BURST_HOURS = 6
CASE_DELAY_MAX_HOURS = 72


class NodeKind(Enum):
    SILENT = 'silent'
    LOW_VOLUME = 'low_volume'
    STABLE_FLAPPER = 'stable_flapper'
    INCIDENT = 'incident'


@dataclass(frozen=True)
class SynthConfig:
    """
    Shape of a synthetic fleet.

    Parameters
    ----------
    nodes : int
        Number of nodes.
    nodes_per_org : int
        Nodes per organization.
    weeks : int
        Weeks of hourly data, starting at ``start``.
    start : str
        Hour-aligned RFC 3339 instant of the first hour.
    silent_fraction, low_volume_fraction, stable_flapper_fraction, \
incident_fraction : float
        Population fractions, summing to 1. Node counts are derived with
        largest-remainder rounding.
    seed : int
        Seed of the random generator.
    """
    nodes: int = 200
    nodes_per_org: int = 10
    weeks: int = 12
    start: str = '2024-01-01T00:00:00Z'
    silent_fraction: float = 0.84
    low_volume_fraction: float = 0.11
    stable_flapper_fraction: float = 0.03
    incident_fraction: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ('nodes', 'nodes_per_org', 'weeks'):
            if getattr(self, name) <= 0:
                raise ConfigError(f'{name} must be positive',
                                  {name: getattr(self, name)})
        if self.seed < 0:
            raise ConfigError('seed must be non-negative', {'seed': self.seed})
        fractions = self.fractions()
        if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError('population fractions must be non-negative '
                              'and sum to 1', {'fractions': fractions})
        try:
            HourBucket.parse(self.start)
        except ValueError as e:
            raise ConfigError(f'Invalid start: {e}', {'start': self.start})

    def fractions(self) -> List[float]:
        return [self.silent_fraction, self.low_volume_fraction,
                self.stable_flapper_fraction, self.incident_fraction]

    def population(self) -> Dict[NodeKind, int]:
        return dict(zip(NodeKind,
                        largest_remainder(self.fractions(), self.nodes)))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SyntheticFleet:
    """
    Events, support cases and roster of a generated fleet.
    """
    config: SynthConfig
    events: EventTable
    cases: List[SupportCase] = field(default_factory=list)
    roster: Dict[str, str] = field(default_factory=dict)
    kinds: Dict[str, NodeKind] = field(default_factory=dict)

    @property
    def window(self) -> Tuple[HourBucket, HourBucket]:
        start = HourBucket.parse(self.config.start)
        return start, start.shift(self.config.weeks * WEEK_HOURS)

    def nodes_of(self, kind: NodeKind) -> List[str]:
        return sorted(n for n, k in self.kinds.items() if k is kind)


def largest_remainder(fractions: Sequence[float], total: int) -> List[int]:
    """
    Integer counts summing to ``total``, proportional to ``fractions``.
    Remainders are handed out largest first, ties in input order.
    """
    quotas = np.asarray(fractions, dtype=np.float64) * total
    counts = np.floor(quotas + 1e-9).astype(np.int64)
    remainders = quotas - counts
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[:total - int(counts.sum())]:
        counts[i] += 1
    return counts.tolist()


def _node_name(i: int, width: int) -> str:
    return f'node-{i:0{width}d}'


def _assign_orgs(kinds: List[NodeKind],
                 nodes_per_org: int,
                 rng: np.random.Generator) -> List[int]:
    """
    Organization number of every node. Stable flappers are grouped into
    roaming organizations filled up with silent nodes; all other nodes
    are shuffled into the remaining organizations.
    """
    flappers = [i for i, k in enumerate(kinds) if k is NodeKind.STABLE_FLAPPER]
    silent = [i for i, k in enumerate(kinds) if k is NodeKind.SILENT]
    org_of = [-1] * len(kinds)
    org = 0
    per_org = min(FLAPPERS_PER_ORG, nodes_per_org)
    for first in range(0, len(flappers), per_org):
        members = flappers[first:first + per_org]
        fill = nodes_per_org - len(members)
        members += silent[:fill]
        silent = silent[fill:]
        for i in members:
            org_of[i] = org
        org += 1

    rest = np.array([i for i in range(len(kinds)) if org_of[i] < 0],
                    dtype=np.int64)
    rng.shuffle(rest)
    for pos, i in enumerate(rest.tolist()):
        org_of[i] = org + pos // nodes_per_org
    return org_of


def _flapper_counts(n_hours: int, rng: np.random.Generator) -> np.ndarray:
    base = int(rng.integers(2, 6))
    spike = base * 10 + 30
    phase = int(rng.integers(0, WEEK_HOURS))
    counts = np.full(n_hours, base, dtype=np.int64)
    for week in range(n_hours // WEEK_HOURS):
        for k in range(FLAPPER_SPIKES_PER_WEEK):
            offset = (phase + week * FLAPPER_SPIKE_STEP_HOURS
                      + k * WEEK_HOURS // FLAPPER_SPIKES_PER_WEEK) % WEEK_HOURS
            counts[week * WEEK_HOURS + offset] = spike
    return counts


def _low_volume_counts(n_hours: int, rng: np.random.Generator) -> np.ndarray:
    counts = rng.poisson(rng.uniform(0.02, 0.2), n_hours).astype(np.int64)
    if not counts.any():
        counts[int(rng.integers(0, n_hours))] = 1
    return counts


def _incident_counts(n_hours: int,
                     burst_weeks: Tuple[int, int],
                     rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    base = int(rng.integers(1, 4))
    counts = np.full(n_hours, base, dtype=np.int64)
    first_week, last_week = burst_weeks
    week = int(rng.integers(first_week, last_week))
    burst = week * WEEK_HOURS + int(
        rng.integers(0, WEEK_HOURS - INCIDENT_BURST_HOURS))
    height = int(rng.integers(40, 120))
    counts[burst:burst + INCIDENT_BURST_HOURS] = height
    return counts, burst


def generate_fleet(config: SynthConfig = SynthConfig(),
                   backtest_weeks: int = DEFAULT_BACKTEST_WEEKS
                   ) -> SyntheticFleet:
    """
    Generate a fleet. Equal configs give equal fleets.

    Incident bursts fall into the ``backtest_weeks`` weeks before the
    last week of data, or into the first weeks when the fleet is too
    short to hold them.
    """
    rng = np.random.default_rng(config.seed)
    n_hours = config.weeks * WEEK_HOURS
    start = HourBucket.parse(config.start).start

    kinds: List[NodeKind] = []
    for kind, n in config.population().items():
        kinds += [kind] * n
    org_of = _assign_orgs(kinds, config.nodes_per_org, rng)
    width = len(str(config.nodes))
    org_width = len(str(max(org_of) + 1))
    names = [_node_name(i, width) for i in range(len(kinds))]
    orgs = [f'org-{o:0{org_width}d}' for o in org_of]

    last_week = max(config.weeks - 1, 1)
    burst_weeks = (max(last_week - backtest_weeks, 0), last_week)

    node_idx: List[np.ndarray] = []
    hour_idx: List[np.ndarray] = []
    values: List[np.ndarray] = []
    cases: List[SupportCase] = []
    for i, kind in enumerate(kinds):
        if kind is NodeKind.SILENT:
            continue
        if kind is NodeKind.LOW_VOLUME:
            counts = _low_volume_counts(n_hours, rng)
        elif kind is NodeKind.STABLE_FLAPPER:
            counts = _flapper_counts(n_hours, rng)
        else:
            counts, burst = _incident_counts(n_hours, burst_weeks, rng)
            delay = int(rng.integers(1, CASE_DELAY_MAX_HOURS + 1))
            opened = start + (burst + delay) * HOUR_SECONDS
            cases.append(SupportCase(f'case-{len(cases) + 1:04d}', orgs[i],
                                     names[i], opened))
        hours = np.flatnonzero(counts)
        node_idx.append(np.full(hours.size, i, dtype=np.int64))
        hour_idx.append(hours)
        values.append(counts[hours])

    if node_idx:
        nodes = np.concatenate(node_idx)
        hours = np.concatenate(hour_idx)
        counts = np.concatenate(values)
    else:
        nodes = hours = counts = np.empty(0, dtype=np.int64)
    timestamps = start + hours * HOUR_SECONDS + \
        rng.integers(0, HOUR_SECONDS, size=hours.size)
    order = np.lexsort((nodes, timestamps))

    events = EventTable.from_columns(
        [names[i] for i in nodes[order].tolist()],
        [orgs[i] for i in nodes[order].tolist()],
        timestamps[order],
        counts[order],
    )
    fleet = SyntheticFleet(
        config=config,
        events=events,
        cases=sorted(cases, key=lambda c: (c.opened_at, c.case_id)),
        roster=dict(zip(names, orgs)),
        kinds=dict(zip(names, kinds)),
    )
    logger.info('synth nodes=%d events=%d cases=%d start=%s weeks=%d',
                len(names), len(events), len(cases),
                format_timestamp(start), config.weeks)
    return fleet
