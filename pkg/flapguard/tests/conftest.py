import numpy as np
import pytest

from flapguard.core.baseline import ThresholdKind, ThresholdSet
from flapguard.core.ingest import HourBucket, HourlySeries, aggregate_hourly
from flapguard.core.synth import SynthConfig, generate_fleet
from flapguard.util.util import HOUR_SECONDS, HOURS_PER_DAY, WEEK_HOURS

# Monday
T0 = HourBucket.parse('2024-01-01T00:00:00Z')


def hour(n: int) -> HourBucket:
    return T0.shift(n)


def make_series(counts, node_id='n1', org_id='o1', start=T0) -> HourlySeries:
    return HourlySeries(node_id, org_id, start,
                        np.asarray(counts, dtype=np.int64))


def constant_series(value, days, node_id='n1', org_id='o1',
                    start=T0) -> HourlySeries:
    return make_series(np.full(days * HOURS_PER_DAY, value), node_id,
                       org_id, start)


def make_thresholds(bounds, node_id='n1', org_id='o1', target=T0,
                    kind=ThresholdKind.INTERIM, exempt=False) -> ThresholdSet:
    if np.isscalar(bounds):
        bounds = np.full(WEEK_HOURS, bounds)
    return ThresholdSet(node_id, org_id, target, bounds, kind, exempt)


def epoch(n_hours: int, seconds: int = 0) -> int:
    return T0.start + n_hours * HOUR_SECONDS + seconds


@pytest.fixture(scope='session')
def synthetic_fleet():
    return generate_fleet(SynthConfig(nodes=200, seed=7))


@pytest.fixture(scope='session')
def fleet_series(synthetic_fleet):
    return aggregate_hourly(synthetic_fleet.events, synthetic_fleet.window,
                            synthetic_fleet.roster)

