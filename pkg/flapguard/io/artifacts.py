import json
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from flapguard._typing import ThresholdMap
from flapguard.core.alerting import AlertRecord
from flapguard.core.baseline import SkippedNode, ThresholdKind, ThresholdSet
from flapguard.core.ingest import HourBucket
from flapguard.core.whitelist import (
    BacktestResult,
    Whitelist,
    WhitelistCriteria,
)
from flapguard.errors import ConfigError, MissingInput, SchemaMismatch
from flapguard.util.util import (
    format_timestamp,
    parse_timestamp,
    sha256_file,
)

SCHEMA_VERSION = '1'
BACKTEST_KIND = 'backtest'
MANIFEST_SUFFIX = '.manifest.json'


def write_json(doc: Any, path: str, indent: Optional[int] = None) -> None:
    """
    Write a JSON document with sorted keys and a trailing newline, so
    equal documents give equal bytes.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    separators = (',', ': ') if indent else (',', ':')
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(doc, sort_keys=True, indent=indent,
                           separators=separators))
        f.write('\n')


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        raise MissingInput(f'Input file {path} does not exist.',
                           {'path': path})
    except json.JSONDecodeError as e:
        raise SchemaMismatch(f'{path} is not valid JSON: {e}',
                             {'path': path})


def check_schema(doc: Mapping[str, Any], kind: Optional[str],
                 path: str = '') -> None:
    version = doc.get('schema_version')
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(
            f'{path or "artifact"} has schema_version {version!r}, '
            f'expected {SCHEMA_VERSION!r}.',
            {'path': path, 'schema_version': version,
             'expected': SCHEMA_VERSION},
        )
    if kind is not None and doc.get('kind') != kind:
        raise SchemaMismatch(
            f'{path or "artifact"} has kind {doc.get("kind")!r}, '
            f'expected {kind!r}.',
            {'path': path, 'kind': doc.get('kind'), 'expected': kind},
        )


def thresholds_to_dict(thresholds: Mapping[str, ThresholdSet],
                       kind: ThresholdKind,
                       target_week_start: HourBucket,
                       skipped: Sequence[SkippedNode] = ()) -> Dict[str, Any]:
    """
    Threshold artifact. ``generated_at`` is the as-of instant of the
    data, ie the target week start.
    """
    entries = []
    for node_id in sorted(thresholds):
        t = thresholds[node_id]
        entry = {'node_id': t.node_id, 'org_id': t.org_id,
                 'bounds': t.bounds.tolist()}
        if kind is ThresholdKind.FINAL:
            entry['exempt'] = t.exempt
        entries.append(entry)
    return {
        'schema_version': SCHEMA_VERSION,
        'kind': kind.value,
        'target_week_start': target_week_start.isoformat(),
        'generated_at': target_week_start.isoformat(),
        'thresholds': entries,
        'skipped': [{'node_id': s.node_id, 'reason': s.reason}
                    for s in sorted(skipped, key=lambda s: s.node_id)],
    }


def thresholds_from_dict(doc: Mapping[str, Any],
                         kind: ThresholdKind,
                         path: str = ''
                         ) -> Tuple[ThresholdMap, HourBucket,
                                    List[SkippedNode]]:
    check_schema(doc, kind.value, path)
    try:
        target = HourBucket.parse(doc['target_week_start'])
        thresholds = {
            e['node_id']: ThresholdSet(e['node_id'], e['org_id'], target,
                                       e['bounds'], kind,
                                       bool(e.get('exempt', False)))
            for e in doc['thresholds']
        }
        skipped = [SkippedNode(s['node_id'], s['reason'])
                   for s in doc.get('skipped', [])]
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaMismatch(f'Malformed threshold artifact {path}: {e}',
                             {'path': path})
    return thresholds, target, skipped


def write_thresholds(path: str, thresholds: Mapping[str, ThresholdSet],
                     kind: ThresholdKind, target_week_start: HourBucket,
                     skipped: Sequence[SkippedNode] = ()) -> None:
    write_json(thresholds_to_dict(thresholds, kind, target_week_start,
                                  skipped), path)


def read_thresholds(path: str, kind: ThresholdKind
                    ) -> Tuple[ThresholdMap, HourBucket, List[SkippedNode]]:
    return thresholds_from_dict(read_json(path), kind, path)


def whitelist_to_dict(whitelist: Whitelist) -> Dict[str, Any]:
    return {
        'schema_version': SCHEMA_VERSION,
        'kind': 'whitelist',
        'generated_at': format_timestamp(whitelist.generated_at),
        'criteria': whitelist.criteria.to_dict(),
        'node_ids': sorted(whitelist.node_ids),
    }


def read_whitelist(path: str) -> Whitelist:
    doc = read_json(path)
    check_schema(doc, 'whitelist', path)
    try:
        return Whitelist(
            node_ids=frozenset(doc['node_ids']),
            criteria=WhitelistCriteria(**doc['criteria']),
            generated_at=parse_timestamp(doc['generated_at']),
        )
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise SchemaMismatch(f'Malformed whitelist {path}: {e}',
                             {'path': path})


def backtest_to_dict(result: BacktestResult) -> Dict[str, Any]:
    return {
        'schema_version': SCHEMA_VERSION,
        'kind': BACKTEST_KIND,
        'target_week_start': result.target_week_start.isoformat(),
        'generated_at': result.target_week_start.isoformat(),
        'weeks': [w.isoformat() for w in result.week_starts],
        'nodes': [{'node_id': n, 'org_id': result.org_ids[n],
                   'weekly_alerts': list(result.weekly_alerts[n])}
                  for n in sorted(result.weekly_alerts)],
        'alerts': [a.to_dict() for a in result.alerts],
        'skipped': [{'node_id': s.node_id, 'reason': s.reason}
                    for s in result.skipped],
    }


def read_backtest(path: str) -> BacktestResult:
    doc = read_json(path)
    check_schema(doc, BACKTEST_KIND, path)
    try:
        result = BacktestResult(
            target_week_start=HourBucket.parse(doc['target_week_start']),
            week_starts=[HourBucket.parse(w) for w in doc['weeks']],
        )
        for node in doc['nodes']:
            result.org_ids[node['node_id']] = node['org_id']
            result.weekly_alerts[node['node_id']] = \
                [int(c) for c in node['weekly_alerts']]
        result.alerts = [AlertRecord.from_dict(a) for a in doc['alerts']]
        result.skipped = [SkippedNode(s['node_id'], s['reason'])
                          for s in doc.get('skipped', [])]
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaMismatch(f'Malformed backtest artifact {path}: {e}',
                             {'path': path})
    return result


def manifest_path(artifact_path: str) -> str:
    return artifact_path + MANIFEST_SUFFIX


def write_manifest(artifact_path: str,
                   command: str,
                   inputs: Mapping[str, str],
                   outputs: Sequence[str],
                   config: Mapping[str, Any],
                   config_hash: str,
                   timings: Mapping[str, float]) -> str:
    """
    Write the run manifest of a stage next to its primary artifact.

    Returns
    -------
    str
        Manifest path.
    """
    path = manifest_path(artifact_path)
    write_json({
        'schema_version': SCHEMA_VERSION,
        'command': command,
        'inputs': {name: {'path': p, 'sha256': sha256_file(p)}
                   for name, p in sorted(inputs.items())},
        'outputs': {p: sha256_file(p) for p in outputs},
        'config': config,
        'config_hash': config_hash,
        'timings': {k: round(v, 6) for k, v in timings.items()},
    }, path, indent=2)
    return path
