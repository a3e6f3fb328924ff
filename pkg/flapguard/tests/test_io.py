import json

import numpy as np
import pytest

from flapguard.core.alerting import AlertRecord
from flapguard.core.baseline import SkippedNode, ThresholdKind
from flapguard.core.whitelist import SupportCase, Whitelist, WhitelistCriteria
from flapguard.errors import MissingInput, SchemaMismatch
from flapguard.io import arrow as arrow_io
from flapguard.io import artifacts
from flapguard.tests.conftest import (
    T0,
    epoch,
    hour,
    make_series,
    make_thresholds,
)


class TestSeriesCsv:

    def test_round_trip(self, tmp_path):
        series = {
            'b': make_series([0, 3, 1], node_id='b', org_id='o2',
                             start=hour(5)),
            'a': make_series([7] * 30, node_id='a'),
        }
        path = str(tmp_path / 'series.csv')
        arrow_io.write_series_csv(series, path)
        with open(path) as f:
            lines = f.read().replace('"', '').splitlines()
        assert lines[0] == 'node_id,org_id,hour_start,count'
        assert lines[1] == 'a,o1,2024-01-01T00:00:00Z,7'
        assert len(lines) == 34
        assert arrow_io.read_series_csv(path) == series

    def test_gap(self, tmp_path):
        path = tmp_path / 'series.csv'
        path.write_text('node_id,org_id,hour_start,count\n'
                        'a,o,2024-01-01T00:00:00Z,1\n'
                        'a,o,2024-01-01T02:00:00Z,1\n')
        with pytest.raises(SchemaMismatch):
            arrow_io.read_series_csv(str(path))

    def test_rows_in_any_order(self, tmp_path):
        path = tmp_path / 'series.csv'
        path.write_text('node_id,org_id,hour_start,count\n'
                        'b,o2,2024-01-01T01:00:00Z,4\n'
                        'a,o1,2024-01-01T02:00:00Z,2\n'
                        'b,o2,2024-01-01T00:00:00Z,3\n'
                        'a,o1,2024-01-01T01:00:00Z,1\n')
        series = arrow_io.read_series_csv(str(path))
        assert list(series) == ['a', 'b']
        assert series['a'] == make_series([1, 2], node_id='a',
                                          start=hour(1))
        assert series['b'] == make_series([3, 4], node_id='b',
                                          org_id='o2')

    def test_duplicate_hour(self, tmp_path):
        path = tmp_path / 'series.csv'
        path.write_text('node_id,org_id,hour_start,count\n'
                        'a,o,2024-01-01T00:00:00Z,1\n'
                        'a,o,2024-01-01T00:00:00Z,2\n')
        with pytest.raises(SchemaMismatch) as e:
            arrow_io.read_series_csv(str(path))
        assert e.value.details['node_id'] == 'a'

    def test_negative_count(self, tmp_path):
        path = tmp_path / 'series.csv'
        path.write_text('node_id,org_id,hour_start,count\n'
                        'a,o,2024-01-01T00:00:00Z,1\n'
                        'a,o,2024-01-01T01:00:00Z,-4\n')
        with pytest.raises(SchemaMismatch) as e:
            arrow_io.read_series_csv(str(path))
        assert e.value.details['line'] == 3
        assert e.value.details['count'] == -4

    def test_empty_count(self, tmp_path):
        path = tmp_path / 'series.csv'
        path.write_text('node_id,org_id,hour_start,count\n'
                        'a,o,2024-01-01T00:00:00Z,\n')
        with pytest.raises(SchemaMismatch):
            arrow_io.read_series_csv(str(path))

    def test_missing_column(self, tmp_path):
        path = tmp_path / 'series.csv'
        path.write_text('node_id,hour_start,count\n'
                        'a,2024-01-01T00:00:00Z,1\n')
        with pytest.raises(SchemaMismatch):
            arrow_io.read_series_csv(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInput):
            arrow_io.read_series_csv(str(tmp_path / 'nope.csv'))


class TestCasesAndRoster:

    def test_cases(self, tmp_path):
        cases = [SupportCase('c1', 'o1', 'n1', epoch(3)),
                 SupportCase('c2', 'o2', None, epoch(40))]
        path = str(tmp_path / 'cases.csv')
        arrow_io.write_cases(cases, path)
        with open(path) as f:
            assert f.read().replace('"', '').splitlines()[2] == \
                'c2,o2,,2024-01-02T16:00:00Z'
        assert arrow_io.read_cases(path) == cases

    def test_case_without_org(self, tmp_path):
        path = tmp_path / 'cases.csv'
        path.write_text('case_id,org_id,node_id,opened_at\n'
                        'c1,,n1,2024-01-01T00:00:00Z\n')
        with pytest.raises(SchemaMismatch):
            arrow_io.read_cases(str(path))

    def test_cases_jsonl(self, tmp_path):
        path = tmp_path / 'cases.jsonl'
        path.write_text(
            '{"case_id": "c1", "org_id": "o1", "node_id": "n1", '
            '"opened_at": "2024-01-01T03:00:00Z"}\n'
            '{"case_id": "c2", "org_id": "o2", '
            '"opened_at": "2024-01-02T16:00:00Z"}\n'
        )
        assert arrow_io.read_cases(str(path)) == [
            SupportCase('c1', 'o1', 'n1', epoch(3)),
            SupportCase('c2', 'o2', None, epoch(40)),
        ]

    def test_cases_jsonl_without_opened_at(self, tmp_path):
        path = tmp_path / 'cases.jsonl'
        path.write_text('{"case_id": "c1", "org_id": "o1"}\n')
        with pytest.raises(SchemaMismatch):
            arrow_io.read_cases(str(path))

    def test_roster(self, tmp_path):
        path = str(tmp_path / 'roster.csv')
        arrow_io.write_roster({'n2': 'o1', 'n1': 'o2'}, path)
        assert arrow_io.read_roster(path) == {'n1': 'o2', 'n2': 'o1'}


class TestEventsAndAlerts:

    def test_events(self, tmp_path, synthetic_fleet):
        path = str(tmp_path / 'events.jsonl')
        arrow_io.write_events_jsonl(synthetic_fleet.events, path)
        with open(path) as f:
            first = json.loads(f.readline())
        assert set(first) == {'node_id', 'org_id', 'timestamp', 'count'}
        assert first['timestamp'].endswith('Z')
        events = arrow_io.read_events(path)
        assert events.get_table().equals(synthetic_fleet.events.get_table())

    def test_alerts(self, tmp_path):
        alerts = [AlertRecord('n1', 'o1', hour(3), 9, 2),
                  AlertRecord('n2', 'o1', hour(4), 1, 0, True)]
        path = str(tmp_path / 'alerts.jsonl')
        arrow_io.write_alerts_jsonl(alerts, path)
        assert arrow_io.read_alerts_jsonl(path) == alerts

    def test_observations(self):
        lines = [
            '{"node_id":"n1","org_id":"o1",'
            '"hour_start":"2024-01-01T00:00:00Z","count":3}\n',
            '\n',
            '{"node_id":"n1","org_id":"o1","hour_start":0}\n',
        ]
        observations = arrow_io.read_observations(iter(lines))
        assert next(observations).count == 3
        with pytest.raises(SchemaMismatch) as e:
            next(observations)
        assert e.value.details == {'line': 3}

    def test_rows_csv(self, tmp_path):
        path = tmp_path / 'rows.csv'
        arrow_io.write_rows_csv([{'bucket': '1-9', 'nodes': 2,
                                  'ratio': 0.5, 'retention': None}],
                                str(path))
        lines = path.read_text().replace('"', '').splitlines()
        assert lines[0] == 'bucket,nodes,ratio,retention'
        assert lines[1] == '1-9,2,0.5,'


class TestArtifacts:

    def test_thresholds(self, tmp_path):
        thresholds = {
            'b': make_thresholds(np.arange(168), node_id='b',
                                 kind=ThresholdKind.FINAL, exempt=True),
            'a': make_thresholds(2, node_id='a', kind=ThresholdKind.FINAL),
        }
        skipped = [SkippedNode('z', 'short'), SkippedNode('c', 'short')]
        path = str(tmp_path / 'final.json')
        artifacts.write_thresholds(path, thresholds, ThresholdKind.FINAL, T0,
                                   skipped)
        doc = artifacts.read_json(path)
        assert doc['kind'] == 'final'
        assert doc['generated_at'] == '2024-01-01T00:00:00Z'
        assert [e['node_id'] for e in doc['thresholds']] == ['a', 'b']
        assert [s['node_id'] for s in doc['skipped']] == ['c', 'z']
        read, target, read_skipped = artifacts.read_thresholds(
            path, ThresholdKind.FINAL)
        assert target == T0
        assert read == thresholds
        assert len(read_skipped) == 2

    def test_interim_has_no_exempt_flag(self, tmp_path):
        path = str(tmp_path / 'interim.json')
        artifacts.write_thresholds(path, {'a': make_thresholds(1, 'a')},
                                   ThresholdKind.INTERIM, T0)
        doc = artifacts.read_json(path)
        assert 'exempt' not in doc['thresholds'][0]
        with pytest.raises(SchemaMismatch):
            artifacts.read_thresholds(path, ThresholdKind.FINAL)

    def test_equal_inputs_give_equal_bytes(self, tmp_path):
        thresholds = {'a': make_thresholds(1, 'a')}
        first, second = tmp_path / '1.json', tmp_path / '2.json'
        for path in (first, second):
            artifacts.write_thresholds(str(path), thresholds,
                                       ThresholdKind.INTERIM, T0)
        assert first.read_bytes() == second.read_bytes()
        assert first.read_bytes().endswith(b'}\n')

    @pytest.mark.parametrize("doc", [
        {'kind': 'interim', 'thresholds': []},
        {'schema_version': '2', 'kind': 'interim', 'thresholds': []},
        {'schema_version': '1', 'kind': 'interim'},
        {'schema_version': '1', 'kind': 'interim',
         'target_week_start': '2024-01-01T00:00:00Z',
         'thresholds': [{'node_id': 'a', 'org_id': 'o',
                         'bounds': [1, 2]}]},
    ])
    def test_schema_mismatch(self, tmp_path, doc):
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaMismatch):
            artifacts.read_thresholds(str(path), ThresholdKind.INTERIM)

    def test_not_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{')
        with pytest.raises(SchemaMismatch):
            artifacts.read_json(str(path))

    def test_whitelist(self, tmp_path):
        whitelist = Whitelist(frozenset({'n2', 'n1'}),
                              WhitelistCriteria(0.6, 20.0, 360), epoch(168))
        path = str(tmp_path / 'whitelist.json')
        artifacts.write_json(artifacts.whitelist_to_dict(whitelist), path)
        doc = artifacts.read_json(path)
        assert doc['node_ids'] == ['n1', 'n2']
        assert doc['generated_at'] == '2024-01-08T00:00:00Z'
        assert artifacts.read_whitelist(path) == whitelist

    def test_backtest(self, tmp_path, fleet_series):
        from flapguard.core.whitelist import run_backtest
        series = {n: fleet_series[n] for n in sorted(fleet_series)[:20]}
        result = run_backtest(series, hour(11 * 168), weeks=2)
        path = str(tmp_path / 'backtest.json')
        artifacts.write_json(artifacts.backtest_to_dict(result), path)
        read = artifacts.read_backtest(path)
        assert read.week_starts == result.week_starts
        assert read.weekly_alerts == result.weekly_alerts
        assert read.org_ids == result.org_ids
        assert read.alerts == result.alerts

    def test_manifest(self, tmp_path):
        artifact = tmp_path / 'out.json'
        source = tmp_path / 'in.csv'
        artifact.write_text('{}\n')
        source.write_text('x\n')
        path = artifacts.write_manifest(
            str(artifact), 'threshold', {'series': str(source)},
            [str(artifact)], {'k': 1}, 'abc', {'total': 0.1234567})
        doc = artifacts.read_json(path)
        assert path.endswith('out.json.manifest.json')
        assert doc['command'] == 'threshold'
        assert len(doc['inputs']['series']['sha256']) == 64
        assert doc['outputs'][str(artifact)] == \
            doc['outputs'][str(artifact)].lower()
        assert doc['timings'] == {'total': 0.123457}
