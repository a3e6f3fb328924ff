import numpy as np
import pytest

from flapguard.core.ingest import aggregate_hourly
from flapguard.core.synth import (
    CASE_DELAY_MAX_HOURS,
    INCIDENT_BURST_HOURS,
    NodeKind,
    SynthConfig,
    generate_fleet,
    largest_remainder,
)
from flapguard.errors import ConfigError
from flapguard.util.util import HOUR_SECONDS


class TestLargestRemainder:

    @pytest.mark.parametrize("total, expected", [
        (200, [168, 22, 6, 4]),
        (5000, [4200, 550, 150, 100]),
        (10, [9, 1, 0, 0]),
        (7, [6, 1, 0, 0]),
        (0, [0, 0, 0, 0]),
    ])
    def test_default_fractions(self, total, expected):
        counts = largest_remainder([0.84, 0.11, 0.03, 0.02], total)
        assert counts == expected
        assert sum(counts) == total

    def test_ties_in_input_order(self):
        assert largest_remainder([0.5, 0.5], 3) == [2, 1]


class TestSynthConfig:

    @pytest.mark.parametrize("kwargs", [
        dict(nodes=0),
        dict(weeks=-1),
        dict(nodes_per_org=0),
        dict(seed=-3),
        dict(silent_fraction=0.9),
        dict(silent_fraction=-0.1, low_volume_fraction=1.05),
        dict(start='2024-01-01T00:30:00Z'),
        dict(start='monday'),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SynthConfig(**kwargs)

    def test_population(self):
        population = SynthConfig(nodes=1000).population()
        assert population == {
            NodeKind.SILENT: 840,
            NodeKind.LOW_VOLUME: 110,
            NodeKind.STABLE_FLAPPER: 30,
            NodeKind.INCIDENT: 20,
        }


class TestGenerateFleet:

    def test_population_counts(self, synthetic_fleet):
        assert len(synthetic_fleet.roster) == 200
        for kind, n in synthetic_fleet.config.population().items():
            assert len(synthetic_fleet.nodes_of(kind)) == n
        active = set(synthetic_fleet.events.node_ids.tolist())
        assert not active & set(synthetic_fleet.nodes_of(NodeKind.SILENT))
        assert set(synthetic_fleet.nodes_of(NodeKind.LOW_VOLUME)) <= active
        assert len(synthetic_fleet.cases) == 4

    def test_deterministic(self):
        config = SynthConfig(nodes=50, weeks=6, seed=3)
        first, second = generate_fleet(config), generate_fleet(config)
        assert first.events.get_table().equals(second.events.get_table())
        assert first.cases == second.cases
        assert first.roster == second.roster
        other = generate_fleet(SynthConfig(nodes=50, weeks=6, seed=4))
        assert not first.events.get_table().equals(other.events.get_table())

    def test_events_in_window_and_sorted(self, synthetic_fleet):
        start, end = synthetic_fleet.window
        timestamps = synthetic_fleet.events.timestamps
        assert timestamps.min() >= start.start
        assert timestamps.max() < end.start
        assert (np.diff(timestamps) >= 0).all()
        assert synthetic_fleet.events.counts.min() >= 1

    def test_names(self, synthetic_fleet):
        assert min(synthetic_fleet.roster) == 'node-000'
        assert max(synthetic_fleet.roster) == 'node-199'
        assert all(o.startswith('org-') for o in
                   synthetic_fleet.roster.values())

    def test_flappers_share_roaming_orgs(self, synthetic_fleet):
        roster = synthetic_fleet.roster
        flappers = synthetic_fleet.nodes_of(NodeKind.STABLE_FLAPPER)
        orgs = {roster[n] for n in flappers}
        assert len(orgs) == 2
        for org in orgs:
            members = [n for n, o in roster.items() if o == org]
            assert len(members) == synthetic_fleet.config.nodes_per_org
            assert {synthetic_fleet.kinds[n] for n in members} == \
                {NodeKind.STABLE_FLAPPER, NodeKind.SILENT}

    def test_flapper_spikes(self, synthetic_fleet, fleet_series):
        for node_id in synthetic_fleet.nodes_of(NodeKind.STABLE_FLAPPER):
            counts = fleet_series[node_id].counts
            base = counts.min()
            assert 2 <= base <= 5
            weeks = counts.reshape(-1, 168)
            assert ((weeks > base).sum(axis=1) == 2).all()
            assert set(np.unique(counts).tolist()) == {base, base * 10 + 30}

    def test_incident_cases(self, synthetic_fleet, fleet_series):
        start, _ = synthetic_fleet.window
        incidents = synthetic_fleet.nodes_of(NodeKind.INCIDENT)
        assert sorted(c.node_id for c in synthetic_fleet.cases) == incidents
        for case in synthetic_fleet.cases:
            counts = fleet_series[case.node_id].counts
            burst = np.flatnonzero(counts > counts.min())
            assert burst.size == INCIDENT_BURST_HOURS
            assert (np.diff(burst) == 1).all()
            # bursts land in the weeks before the last one
            assert 6 * 168 <= burst[0] and burst[-1] < 11 * 168
            delay = (case.opened_at - start.start) // HOUR_SECONDS - burst[0]
            assert 1 <= delay <= CASE_DELAY_MAX_HOURS
            assert case.org_id == synthetic_fleet.roster[case.node_id]
        assert [c.opened_at for c in synthetic_fleet.cases] == \
            sorted(c.opened_at for c in synthetic_fleet.cases)

    def test_small_fleet_without_flappers(self):
        fleet = generate_fleet(SynthConfig(nodes=5, weeks=2, seed=1))
        series = aggregate_hourly(fleet.events, fleet.window, fleet.roster)
        assert len(series) == 5
        assert all(s.num_hours == 2 * 168 for s in series.values())
