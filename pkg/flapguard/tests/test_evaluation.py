import numpy as np
import pytest

from flapguard.core.alerting import AlertRecord, apply_whitelist
from flapguard.core.evaluation import (
    BUCKETS,
    ConfusionCounts,
    alert_ratios,
    bucket_index,
    case_coverage,
    confusion,
    evaluate,
    event_histogram,
    grid_search,
    label_node_hours,
    retention,
    weekly_alerted_nodes,
    weekly_confusion,
)
from flapguard.core.synth import NodeKind
from flapguard.core.whitelist import (
    SupportCase,
    WhitelistCriteria,
    build_profiles,
    build_whitelist,
    join_cases,
    run_backtest,
)
from flapguard.errors import ConfigError, WindowMismatch
from flapguard.tests.conftest import epoch, hour, make_series

WEEK = 168


def alert(n, node_id='n1', org_id='o1', suppressed=False):
    return AlertRecord(node_id, org_id, hour(n), 10, 1, suppressed)


def case(opened_hours, node_id='n1', org_id='o1', case_id='c1'):
    return SupportCase(case_id, org_id, node_id, epoch(opened_hours))


class TestConfusion:

    def test_twenty_node_hours(self):
        series = {'n1': make_series([1] * 20)}
        labels = label_node_hours([case(10)], series, window_hours=5)
        assert labels.positives['n1'].tolist() == \
            [False] * 5 + [True] * 10 + [False] * 5
        counts = confusion(labels, [alert(h) for h in (3, 6, 7, 12, 18)])
        assert counts == ConfusionCounts(tp=3, fp=2, tn=8, fn=7)
        metrics = counts.metrics()
        assert metrics['precision'] == 0.6
        assert metrics['recall'] == 0.3
        assert metrics['tn_rate'] == 0.8
        assert metrics['accuracy'] == 0.55
        assert not any(metrics[f'{m}_undefined']
                       for m in ('precision', 'recall', 'tn_rate',
                                 'accuracy'))

    def test_suppressed_and_foreign_alerts_are_ignored(self):
        series = {'n1': make_series([0] * 20)}
        labels = label_node_hours([case(10)], series, window_hours=5)
        alerts = [alert(6, suppressed=True), alert(7, node_id='n9'),
                  alert(40)]
        assert confusion(labels, alerts) == ConfusionCounts(tn=10, fn=10)

    def test_undefined_metrics(self):
        metrics = ConfusionCounts().metrics()
        for name in ('precision', 'recall', 'tn_rate', 'accuracy'):
            assert metrics[name] == 0
            assert metrics[f'{name}_undefined']
        metrics = ConfusionCounts(tn=4).metrics()
        assert metrics['precision_undefined']
        assert metrics['recall_undefined']
        assert metrics['tn_rate'] == 1.0
        assert metrics['accuracy'] == 1.0

    def test_weekly_confusion(self):
        series = {'n1': make_series([0] * (2 * WEEK))}
        labels = label_node_hours([case(10)], series, window_hours=20)
        weekly = weekly_confusion(labels, [alert(0), alert(200)],
                                  [hour(0), hour(WEEK)])
        assert weekly[hour(0)] == ConfusionCounts(tp=1, tn=138, fn=29)
        assert weekly[hour(WEEK)] == ConfusionCounts(fp=1, tn=167)
        assert sum(weekly.values(), ConfusionCounts()) == \
            confusion(labels, [alert(0), alert(200)])


class TestLabels:

    series = {'n1': make_series([0] * 2000),
              'n2': make_series([0] * 2000, node_id='n2'),
              'm1': make_series([0] * 2000, node_id='m1', org_id='o2')}

    @pytest.mark.parametrize("n, positive", [
        (1000, True),
        (900, True),
        (1000 - 720, True),
        (1000 - 721, False),
        (1000 + 719, True),
        (1000 + 720, False),
        (1000 + 721, False),
    ])
    def test_case_window(self, n, positive):
        labels = label_node_hours([case(1000)], self.series)
        assert labels.label_of('n1', hour(n)) is positive
        assert labels.positives['n2'].sum() == 0

    def test_org_level_case(self):
        labels = label_node_hours([case(1000, node_id=None)], self.series)
        assert labels.positives['n1'].sum() == 1440
        assert labels.positives['n2'].sum() == 1440
        assert labels.positives['m1'].sum() == 0

    def test_no_cases(self):
        labels = label_node_hours([], self.series)
        assert labels.total == 6000
        assert labels.positive == 0
        counts = confusion(labels, [alert(5)])
        assert counts == ConfusionCounts(fp=1, tn=5999)
        assert counts.metrics()['recall_undefined']

    def test_invalid_window(self):
        with pytest.raises(ConfigError):
            label_node_hours([], self.series, window_hours=0)
        with pytest.raises(ConfigError):
            label_node_hours([], self.series, bin_hours=0)

    def test_event_hours_in_window(self):
        counts = np.zeros(100, dtype=np.int64)
        counts[[10, 50, 60, 90]] = 1
        labels = label_node_hours([case(55)], {'n1': make_series(counts)},
                                  window_hours=10)
        assert labels.event_hours == 4
        assert labels.event_hours_in_window == 2
        assert labels.event_hours_in_window_fraction() == 0.5

    def test_distance_histogram(self):
        counts = np.zeros(200, dtype=np.int64)
        counts[[100, 101, 124, 125, 99, 76, 0]] = 1
        labels = label_node_hours([case(100)], {'n1': make_series(counts)})
        assert labels.distance_histogram == {-5: 1, -1: 2, 0: 1, 1: 2, 2: 1}
        assert [r['bin'] for r in labels.distance_rows()] == \
            [-5, -1, 0, 1, 2]

    def test_distance_tie_goes_to_smaller_case_id(self):
        counts = np.zeros(100, dtype=np.int64)
        counts[50] = 1
        cases = [case(20, case_id='b'), case(80, case_id='a')]
        labels = label_node_hours(cases, {'n1': make_series(counts)},
                                  bin_hours=1)
        assert labels.distance_histogram == {-30: 1}

    def test_time_reversal_symmetry(self):
        rng = np.random.default_rng(17)
        n_hours = 3000
        counts = rng.poisson(0.05, n_hours)
        opened = rng.choice(n_hours, 6, replace=False)
        cases = [case(int(t), node_id=None, case_id=f'c{i}')
                 for i, t in enumerate(opened)]
        mirrored_cases = [case(n_hours - 1 - int(t), node_id=None,
                               case_id=f'c{i}')
                          for i, t in enumerate(opened)]
        forward = label_node_hours(cases, {'n1': make_series(counts)})
        backward = label_node_hours(mirrored_cases,
                                    {'n1': make_series(counts[::-1])})
        assert forward.distance_histogram
        assert backward.distance_histogram == \
            {-b: c for b, c in forward.distance_histogram.items()}


class TestEventHistogram:

    def test_bucket_index(self):
        values = [0, 0.2, 1, 9, 9.5, 10, 99, 100, 999, 1000, 10 ** 6]
        assert bucket_index(np.array(values)).tolist() == \
            [0, 1, 1, 1, 1, 2, 2, 3, 3, 4, 4]

    def test_fractions(self):
        series = {
            'a': make_series([0] * 10, node_id='a'),
            'b': make_series([0] * 5 + [3] * 5, node_id='b'),
            'c': make_series([0] * 5 + [20] * 5, node_id='c'),
            'd': make_series([0] * 5 + [1000] * 5, node_id='d'),
            'e': make_series([0] * 10 + [500] * 5 + [0] * 5, node_id='e')
                .slice(hour(5), hour(15)),
        }
        histogram = event_histogram(series)
        assert histogram.node_hours == {'0': 30, '1-9': 5, '10-99': 5,
                                        '100-999': 5, '>=1000': 5}
        assert histogram.nodes == {'0': 1, '1-9': 1, '10-99': 1,
                                   '100-999': 2, '>=1000': 0}
        fractions = histogram.node_hour_fractions()
        assert fractions['0'] == 0.6
        assert sum(fractions.values()) == pytest.approx(1.0)
        assert [r['bucket'] for r in histogram.rows()] == list(BUCKETS)

    def test_mostly_silent_fleet(self):
        series = {f'n{i}': make_series([0] * 7 + [2] * 3, node_id=f'n{i}')
                  for i in range(10)}
        fractions = event_histogram(series).node_hour_fractions()
        assert fractions['0'] == 0.7
        assert fractions['1-9'] == 0.3

    def test_empty(self):
        histogram = event_histogram({})
        assert histogram.node_hour_fractions() == {b: 0.0 for b in BUCKETS}


class TestCaseCoverage:

    def test_three_of_five(self):
        cases = [case(100, case_id='c1'),
                 case(100, node_id='n2', case_id='c2'),
                 case(2500, case_id='c3'),
                 case(500, node_id=None, org_id='o2', case_id='c4'),
                 case(100, node_id=None, org_id='o3', case_id='c5')]
        alerts = [alert(90), alert(95), alert(100, node_id='n2',
                                                 suppressed=True),
                  alert(1000, node_id='m1', org_id='o2'),
                  alert(3000)]
        coverage = case_coverage(cases, alerts)
        assert coverage.fraction == 0.6
        assert [r.alerts_in_window for r in coverage.rows] == [2, 0, 1, 1, 0]
        assert coverage.rows[0].to_dict()['opened_at'] == \
            '2024-01-05T04:00:00Z'
        assert coverage.rows[3].to_dict()['node_id'] == ''

    def test_no_cases(self):
        coverage = case_coverage([], [alert(1)])
        assert coverage.fraction == 0.0
        assert coverage.rows == []


class TestRetention:

    def test_retention(self):
        weeks = [{'a', 'b'}, {'b', 'c'}, set(), {'c'}, {'c', 'd', 'e', 'f'}]
        assert retention(weeks) == [None, 0.5, 0.0, 0.0, 0.25]

    def test_empty(self):
        assert retention([]) == []

    def test_weekly_alerted_nodes(self):
        alerts = [alert(0, node_id='a'), alert(167, node_id='b'),
                  alert(168, node_id='a'), alert(400, node_id='c'),
                  alert(10, node_id='d', suppressed=True),
                  alert(-1, node_id='e')]
        assert weekly_alerted_nodes(alerts, [hour(0), hour(WEEK)]) == \
            [{'a', 'b'}, {'a'}]


class TestAlertRatios:

    def test_ratios(self):
        series = {
            'a': make_series([0] * WEEK * 2, node_id='a', org_id='o1'),
            'b': make_series([50] * WEEK * 2, node_id='b', org_id='o1'),
            'c': make_series([2] * WEEK * 2, node_id='c', org_id='o2'),
        }
        alerts = [alert(3, node_id='b'), alert(3, node_id='b'),
                  alert(200, node_id='b'), alert(5, node_id='c',
                                                  org_id='o2',
                                                  suppressed=True)]
        report = alert_ratios(series, alerts, [case(0, node_id='b')],
                              [hour(0), hour(WEEK)])
        assert report.by_org['o1'].to_dict() == {
            'nodes': 2, 'alerted_nodes': 1, 'hours': 672,
            'alerted_hours': 2, 'nodes_ratio': 0.5,
            'hours_ratio': 2 / 672,
        }
        assert report.by_org['o2'].alerted_nodes == 0
        assert report.org_alert_ratio == 0.5
        assert report.by_bucket['10-99'].alerted_nodes == 1
        assert report.by_bucket['0'].nodes == 1
        assert report.by_week[hour(0)].alerted_hours == 1
        assert report.by_week[hour(WEEK)].alerted_hours == 1
        assert report.by_week[hour(WEEK)].hours == 3 * WEEK
        assert report.case_alert_coverage == 1.0
        assert [r['org_id'] for r in report.org_rows()] == ['o1', 'o2']


class TestGridSearch:

    weekly = {'a': [2, 2, 2, 2], 'b': [1, 1, 1, 0], 'c': [0, 1, 0, 1],
              'd': [5, 5, 5, 5], 'e': [0, 0, 0, 1]}
    org_ids = {'a': 'o1', 'b': 'o1', 'c': 'o2', 'd': 'o3', 'e': 'o4'}
    alerts = [alert(1, node_id=n, org_id=o) for n, o in org_ids.items()
              if n != 'e'] + [alert(2, node_id='d', org_id='o3')]
    cases = [case(5, node_id='d', case_id='c1'),
             case(5, node_id=None, org_id='o2', case_id='c2')]

    def profiles(self):
        return build_profiles(self.weekly, self.org_ids)

    def test_single_point_matches_one_shot(self):
        profiles = self.profiles()
        links = join_cases(profiles, self.cases,
                           {a.node_id: [a.hour] for a in self.alerts}).links
        [point] = grid_search(profiles, links, [2], [40.0], self.alerts,
                              self.cases, self.org_ids)
        criteria = WhitelistCriteria(0.5, 40.0)
        whitelist = build_whitelist(profiles, links, criteria)
        active = [a for a in apply_whitelist(self.alerts, whitelist)
                  if not a.suppressed]
        assert sorted(whitelist) == ['a', 'b']
        assert point.whitelist_size == 2
        assert point.alerts == len(active) == 3
        assert point.alerted_nodes == 2
        assert point.case_coverage == \
            case_coverage(self.cases, active).fraction == 1.0
        assert point.org_alert_ratio == 0.5

    def test_loosest_point_has_empty_whitelist(self):
        [point] = grid_search(self.profiles(), {}, [4], [1000.0],
                              self.alerts, self.cases, self.org_ids)
        assert point.whitelist_size == 0
        assert point.alerts == len(self.alerts)

    def test_grid_order(self):
        rows = grid_search(self.profiles(), {}, [3, 1, 2], [10, 0, 10],
                           self.alerts, self.cases, self.org_ids)
        assert [(r.min_weeks, r.max_change) for r in rows] == \
            [(1, 0.0), (1, 10.0), (2, 0.0), (2, 10.0), (3, 0.0), (3, 10.0)]
        assert set(rows[0].to_dict()) == {
            'min_weeks', 'max_change', 'org_alert_ratio', 'case_coverage',
            'whitelist_size', 'alerted_nodes', 'alerts'}

    @pytest.mark.parametrize("weeks_grid, change_grid", [
        ([0], [10]),
        ([5], [10]),
        ([], [10]),
        ([1], []),
    ])
    def test_invalid_grid(self, weeks_grid, change_grid):
        with pytest.raises(ConfigError):
            grid_search(self.profiles(), {}, weeks_grid, change_grid,
                        self.alerts, self.cases, self.org_ids)

    def test_synthetic_trade_off(self, synthetic_fleet, fleet_series):
        result = run_backtest(fleet_series, hour(11 * WEEK))
        profiles = build_profiles(result.weekly_alerts, result.org_ids)
        links = join_cases(profiles, synthetic_fleet.cases,
                           result.alerts_by_node()).links
        rows = grid_search(profiles, links, [1, 2, 3, 4, 5],
                           [0, 5, 10, 50, 100], result.alerts,
                           synthetic_fleet.cases, result.org_ids)
        grid = {(r.min_weeks, r.max_change): r for r in rows}
        for (w, c), row in grid.items():
            for (w2, c2), other in grid.items():
                if w2 <= w and c2 >= c:
                    # looser criteria whitelist a superset
                    assert other.whitelist_size >= row.whitelist_size
                    assert other.alerts <= row.alerts
                    assert other.org_alert_ratio <= row.org_alert_ratio
        # incident nodes are never whitelisted, so no case is lost
        assert all(r.case_coverage == 1.0 for r in rows)
        # moving from no exemptions to the default criteria cuts the
        # alerted organizations more than the covered cases
        default, none = grid[(2, 10.0)], grid[(5, 10.0)]
        assert none.whitelist_size == 0
        assert default.org_alert_ratio < none.org_alert_ratio
        org_drop = 1 - default.org_alert_ratio / none.org_alert_ratio
        case_drop = 1 - default.case_coverage / none.case_coverage
        assert case_drop < org_drop
        strict, loose = grid[(5, 0.0)], grid[(1, 100.0)]
        flappers = synthetic_fleet.nodes_of(NodeKind.STABLE_FLAPPER)
        assert strict.whitelist_size == 0
        assert loose.whitelist_size >= len(flappers)
        assert loose.org_alert_ratio < strict.org_alert_ratio


class TestEvaluate:

    def test_synthetic_fleet(self, synthetic_fleet, fleet_series):
        result = run_backtest(fleet_series, hour(11 * WEEK))
        profiles = build_profiles(result.weekly_alerts, result.org_ids)
        links = join_cases(profiles, synthetic_fleet.cases,
                           result.alerts_by_node()).links
        whitelist = build_whitelist(profiles, links)

        plain = evaluate(fleet_series, result.alerts, synthetic_fleet.cases,
                         result.week_starts)
        filtered = evaluate(fleet_series, result.alerts,
                            synthetic_fleet.cases, result.week_starts,
                            whitelist=whitelist)
        node_hours = len(fleet_series) * 5 * WEEK
        assert plain.confusion.total == filtered.confusion.total == node_hours
        assert plain.coverage.fraction == filtered.coverage.fraction == 1.0
        assert filtered.confusion.fp < plain.confusion.fp
        assert filtered.confusion.tp == plain.confusion.tp
        assert filtered.whitelist_size == len(whitelist)
        assert filtered.retention[0] is None
        assert len(filtered.weekly_rows()) == 5

        summary = filtered.summary()
        assert summary['nodes'] == len(fleet_series)
        assert summary['node_hours'] == node_hours
        assert summary['cases'] == len(synthetic_fleet.cases)
        assert summary['histogram']['nodes']['0'] > 0.8

    def test_series_must_cover_weeks(self):
        series = {'n1': make_series([0] * WEEK)}
        with pytest.raises(WindowMismatch):
            evaluate(series, [], [], [hour(0), hour(WEEK)])

    def test_needs_weeks(self):
        with pytest.raises(ConfigError):
            evaluate({}, [], [], [])
