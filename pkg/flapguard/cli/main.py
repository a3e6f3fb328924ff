"""
Command line front end.

Every subcommand realizes one pipeline stage, reads its inputs from the
work directory (or explicit paths), writes one primary artifact plus a
``<artifact>.manifest.json`` run manifest, and exits with status 0.
Errors are reported as one JSON object on stderr with exit status 2.
"""
import argparse
import json
import logging
import os
import sys
import time
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

from flapguard._version import __version__
from flapguard.config import PipelineConfig, load_config
from flapguard.core.alerting import AlertDetector, UnknownNodePolicy
from flapguard.core.baseline import ThresholdKind, generate_interim_thresholds
from flapguard.core.evaluation import evaluate, grid_search
from flapguard.core.ingest import (
    HourBucket,
    HourlySeries,
    InputFormat,
    OnError,
    aggregate_hourly,
    infer_window,
)
from flapguard.core.synth import generate_fleet
from flapguard.core.whitelist import (
    PROFILE_COLUMNS,
    build_profiles,
    build_whitelist,
    finalize_thresholds,
    join_cases,
    profile_rows,
    run_backtest,
)
from flapguard.errors import FlapguardError, InsufficientHistory, MissingInput
from flapguard.io import arrow as arrow_io
from flapguard.io import artifacts
from flapguard.util.log import configure_logging
from flapguard.util.util import WEEK_HOURS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_ALL_SKIPPED = 3

EVENTS = 'events.jsonl'
CASES = 'cases.csv'
ROSTER = 'roster.csv'
SERIES = 'series.csv'
INTERIM = 'thresholds.interim.json'
BACKTEST = 'backtest.json'
WHITELIST = 'whitelist.json'
FINAL = 'thresholds.final.json'
ALERTS = 'alerts.jsonl'
EVALUATION_DIR = 'evaluation'
SUMMARY = 'summary.json'
TUNE = 'tune.csv'
PROFILES = 'profiles.csv'

DEFAULT_CHANGE_GRID = '0,5,10,20,50,100'


class Stage:
    """
    Bookkeeping of one subcommand run: resolved config, input paths and
    timings, written out as the run manifest.
    """
    def __init__(self, command: str, config: PipelineConfig) -> None:
        self.command = command
        self.config = config
        self.inputs: Dict[str, str] = {}
        self.timings: Dict[str, float] = {}
        self._started = time.perf_counter()

    def path(self, name: str) -> str:
        return os.path.join(self.config.paths.workdir, name)

    def input(self, name: str, path: Optional[str]) -> str:
        if path is None or not os.path.exists(path):
            raise MissingInput(f'Input {name} ({path}) does not exist.',
                               {'input': name, 'path': path})
        self.inputs[name] = path
        return path

    def timed(self, name: str, func: Callable[..., Any],
              *args: Any, **kwargs: Any) -> Any:
        start = time.perf_counter()
        result = func(*args, **kwargs)
        self.timings[name] = time.perf_counter() - start
        return result

    def finish(self, artifact: str, outputs: Sequence[str] = ()) -> None:
        self.timings['total'] = time.perf_counter() - self._started
        artifacts.write_manifest(
            artifact, self.command, self.inputs, [artifact, *outputs],
            self.config.to_dict(), self.config.config_hash(), self.timings,
        )
        logger.info('stage=%s artifact=%s seconds=%.3f', self.command,
                    artifact, self.timings['total'])


def _target_week(args: argparse.Namespace,
                 series_by_node: Mapping[str, HourlySeries]) -> HourBucket:
    """
    Explicit ``--target-week``, otherwise the last full week of the series.
    """
    if args.target_week:
        return HourBucket.parse(args.target_week)
    if not series_by_node:
        raise InsufficientHistory('No series to derive a target week from.')
    end = max(s.window_end for s in series_by_node.values())
    return end.shift(-WEEK_HOURS)


def _read_series(stage: Stage, args: argparse.Namespace):
    return arrow_io.read_series_csv(
        stage.input('series', args.series or stage.path(SERIES)))


def _int_list(value: str) -> List[int]:
    return [int(v) for v in value.split(',') if v.strip()]


def _float_list(value: str) -> List[float]:
    return [float(v) for v in value.split(',') if v.strip()]


def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('synth', config)
    os.makedirs(config.paths.workdir, exist_ok=True)
    fleet = stage.timed('generate', generate_fleet, config.synth,
                        config.backtest_weeks)
    events, cases, roster = (stage.path(EVENTS), stage.path(CASES),
                             stage.path(ROSTER))
    arrow_io.write_events_jsonl(fleet.events, events)
    arrow_io.write_cases(fleet.cases, cases)
    arrow_io.write_roster(fleet.roster, roster)
    stage.finish(events, [cases, roster])
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('aggregate', config)
    events_path = stage.input(
        'events', config.paths.events or stage.path(EVENTS))
    roster_path = config.paths.roster or stage.path(ROSTER)
    roster = None
    if os.path.exists(roster_path):
        roster = arrow_io.read_roster(stage.input('roster', roster_path))

    events = stage.timed('parse', arrow_io.read_events, events_path,
                         InputFormat(config.paths.event_format),
                         OnError(args.on_error))
    if args.window_start and args.window_end:
        window = (HourBucket.parse(args.window_start),
                  HourBucket.parse(args.window_end))
    else:
        window = infer_window(events)
    series = stage.timed('aggregate', aggregate_hourly, events, window,
                         roster)
    output = stage.path(SERIES)
    stage.timed('write', arrow_io.write_series_csv, series, output)
    stage.finish(output)
    return EXIT_OK


def cmd_threshold(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('threshold', config)
    series = _read_series(stage, args)
    target = _target_week(args, series)
    batch = stage.timed('thresholds', generate_interim_thresholds, series,
                        config.baseline, target)
    output = stage.path(INTERIM)
    artifacts.write_thresholds(output, batch.thresholds, ThresholdKind.INTERIM,
                               target, batch.skipped)
    stage.finish(output)
    if batch.skipped and not batch.thresholds:
        error = InsufficientHistory(
            'Every node was skipped for insufficient history.',
            {'skipped': [s.node_id for s in batch.skipped]},
        )
        print(json.dumps(error.to_dict()), file=sys.stderr)
        return EXIT_ALL_SKIPPED
    return EXIT_OK


def cmd_backtest(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('backtest', config)
    series = _read_series(stage, args)
    target = _target_week(args, series)
    result = stage.timed('backtest', run_backtest, series, target,
                         config.backtest_weeks, config.baseline)
    output = stage.path(BACKTEST)
    artifacts.write_json(artifacts.backtest_to_dict(result), output)
    stage.finish(output)
    return EXIT_OK


def _cases(stage: Stage, config: PipelineConfig, path: Optional[str]):
    return arrow_io.read_cases(stage.input(
        'cases', path or config.paths.cases or stage.path(CASES)))


def cmd_whitelist(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('whitelist', config)
    backtest = artifacts.read_backtest(
        stage.input('backtest', args.backtest or stage.path(BACKTEST)))
    interim, target, skipped = artifacts.read_thresholds(
        stage.input('interim', args.interim or stage.path(INTERIM)),
        ThresholdKind.INTERIM)
    cases = _cases(stage, config, args.cases)

    profiles = build_profiles(backtest.weekly_alerts, backtest.org_ids)
    links = stage.timed('join_cases', join_cases, profiles, cases,
                        backtest.alerts_by_node(),
                        config.whitelist.case_window_hours)
    whitelist = build_whitelist(profiles, links.links, config.whitelist,
                                target.start)
    output, final = stage.path(WHITELIST), stage.path(FINAL)
    report = stage.path(PROFILES)
    artifacts.write_json(artifacts.whitelist_to_dict(whitelist), output)
    artifacts.write_thresholds(final, finalize_thresholds(interim, whitelist),
                               ThresholdKind.FINAL, target, skipped)
    arrow_io.write_rows_csv(profile_rows(profiles, links.links, whitelist),
                            report, PROFILE_COLUMNS)
    stage.finish(output, [final, report])
    return EXIT_OK


def _clip_to_week(series_by_node: Mapping[str, HourlySeries],
                  week_start: HourBucket) -> Dict[str, HourlySeries]:
    week_end = week_start.shift(WEEK_HOURS)
    clipped = {}
    for node_id, series in series_by_node.items():
        start = max(series.window_start, week_start)
        end = min(series.window_end, week_end)
        if start < end:
            clipped[node_id] = series.slice(start, end)
    return clipped


def cmd_detect(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('detect', config)
    final, target, _ = artifacts.read_thresholds(
        stage.input('final', args.final or stage.path(FINAL)),
        ThresholdKind.FINAL)
    detector = AlertDetector(final, config.unknown_node_policy,
                             args.include_suppressed, target)

    if args.stream:
        for alert in detector.detect(arrow_io.read_observations(sys.stdin)):
            sys.stdout.write(arrow_io.alert_line(alert) + '\n')
            sys.stdout.flush()
        logger.info('detect %s', detector.summary.to_dict())
        return EXIT_OK

    series = _clip_to_week(_read_series(stage, args), target)
    alerts = stage.timed('detect', detector.detect_series, series)
    output = stage.path(ALERTS)
    arrow_io.write_alerts_jsonl(alerts, output)
    stage.finish(output)
    logger.info('detect %s', detector.summary.to_dict())
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('evaluate', config)
    series = _read_series(stage, args)
    backtest = artifacts.read_backtest(
        stage.input('backtest', args.backtest or stage.path(BACKTEST)))
    cases = _cases(stage, config, args.cases)
    whitelist = None
    whitelist_path = args.whitelist or stage.path(WHITELIST)
    if not args.no_whitelist and os.path.exists(whitelist_path):
        whitelist = artifacts.read_whitelist(
            stage.input('whitelist', whitelist_path))

    report = stage.timed('evaluate', evaluate, series, backtest.alerts,
                         cases, backtest.week_starts,
                         config.whitelist.case_window_hours, whitelist,
                         args.bin_hours)
    directory = stage.path(EVALUATION_DIR)
    os.makedirs(directory, exist_ok=True)
    reports = {
        'histogram.csv': report.histogram.rows(),
        'weekly.csv': report.weekly_rows(),
        'buckets.csv': report.ratios.bucket_rows(),
        'orgs.csv': report.ratios.org_rows(),
        'distance.csv': report.labels.distance_rows(),
        'cases.csv': [r.to_dict() for r in report.coverage.rows],
    }
    outputs = []
    for name, rows in reports.items():
        path = os.path.join(directory, name)
        arrow_io.write_rows_csv(rows, path)
        outputs.append(path)
    summary = report.summary()
    output = os.path.join(directory, SUMMARY)
    artifacts.write_json(summary, output, indent=2)
    stage.finish(output, outputs)
    if args.summary:
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_tune(args: argparse.Namespace, config: PipelineConfig) -> int:
    stage = Stage('tune', config)
    series = _read_series(stage, args)
    backtest = artifacts.read_backtest(
        stage.input('backtest', args.backtest or stage.path(BACKTEST)))
    cases = _cases(stage, config, args.cases)

    profiles = build_profiles(backtest.weekly_alerts, backtest.org_ids)
    window_hours = config.whitelist.case_window_hours
    links = join_cases(profiles, cases, backtest.alerts_by_node(),
                       window_hours)
    weeks_grid = _int_list(args.weeks_grid) if args.weeks_grid \
        else list(range(1, backtest.weeks + 1))
    rows = stage.timed(
        'grid_search', grid_search, profiles, links.links, weeks_grid,
        _float_list(args.change_grid), backtest.alerts, cases,
        {n: s.org_id for n, s in series.items()}, window_hours,
    )
    output = stage.path(TUNE)
    arrow_io.write_rows_csv([r.to_dict() for r in rows], output)
    stage.finish(output)
    return EXIT_OK


def _overrides(args: argparse.Namespace,
               config: PipelineConfig) -> PipelineConfig:
    def pick(mapping: Dict[str, str]) -> Dict[str, Any]:
        return {field: getattr(args, dest) for dest, field in mapping.items()
                if getattr(args, dest, None) is not None}

    changes: Dict[str, Any] = {}
    sections = {
        'baseline': pick({'buffer_days': 'buffer_days',
                          'sigma_multiplier': 'sigma_multiplier',
                          'lookback_days': 'lookback_days',
                          'buffer_offset_days': 'buffer_offset_days'}),
        'whitelist': pick({'min_weeks_fraction': 'min_weeks_alerted_fraction',
                           'max_change': 'max_avg_abs_wow_alert_change',
                           'case_window_hours': 'case_window_hours'}),
        'synth': pick({'seed': 'seed', 'nodes': 'nodes',
                       'nodes_per_org': 'nodes_per_org', 'weeks': 'weeks',
                       'start': 'start'}),
        'paths': pick({'workdir': 'workdir', 'events': 'events',
                       'roster': 'roster', 'input_format': 'event_format'}),
    }
    for section, values in sections.items():
        if values:
            changes[section] = values
    if getattr(args, 'backtest_weeks', None) is not None:
        changes['backtest_weeks'] = args.backtest_weeks
    if getattr(args, 'unknown_node_policy', None) is not None:
        changes['unknown_node_policy'] = \
            UnknownNodePolicy(args.unknown_node_policy)
    return config.replace(**changes) if changes else config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='TOML configuration file')
    parser.add_argument('--workdir', help='artifact directory')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='log at INFO level')


def _add_baseline(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--series', help='hourly series CSV')
    parser.add_argument('--target-week',
                        help='target week start (default: last full week)')
    parser.add_argument('--buffer-days', type=int)
    parser.add_argument('--sigma-multiplier', type=float)
    parser.add_argument('--lookback-days', type=int)
    parser.add_argument('--buffer-offset-days', type=int)


def _add_whitelist(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--cases', help='support cases CSV or JSONL')
    parser.add_argument('--backtest', help='backtest artifact')
    parser.add_argument('--min-weeks-fraction', type=float)
    parser.add_argument('--max-change', type=float)
    parser.add_argument('--case-window-hours', type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='flapguard',
        description='MAC-flap alert thresholds, whitelisting and evaluation.',
    )
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', help='generate a synthetic fleet')
    _add_common(synth)
    synth.add_argument('--seed', type=int)
    synth.add_argument('--nodes', type=int)
    synth.add_argument('--nodes-per-org', type=int)
    synth.add_argument('--weeks', type=int)
    synth.add_argument('--start')
    synth.add_argument('--backtest-weeks', type=int)
    synth.set_defaults(func=cmd_synth)

    aggregate = commands.add_parser('aggregate',
                                    help='aggregate events into hourly series')
    _add_common(aggregate)
    aggregate.add_argument('--events', help='event log')
    aggregate.add_argument('--roster', help='node roster CSV')
    aggregate.add_argument('--format', dest='input_format',
                           choices=[f.value for f in InputFormat])
    aggregate.add_argument('--on-error', default=OnError.RAISE.value,
                           choices=[o.value for o in OnError])
    aggregate.add_argument('--start', dest='window_start',
                           help='window start')
    aggregate.add_argument('--end', dest='window_end', help='window end')
    aggregate.set_defaults(func=cmd_aggregate)

    threshold = commands.add_parser('threshold',
                                    help='generate interim thresholds')
    _add_common(threshold)
    _add_baseline(threshold)
    threshold.set_defaults(func=cmd_threshold)

    backtest = commands.add_parser('backtest',
                                   help='backtest the weeks before the target')
    _add_common(backtest)
    _add_baseline(backtest)
    backtest.add_argument('--weeks', dest='backtest_weeks', type=int)
    backtest.set_defaults(func=cmd_backtest)

    whitelist = commands.add_parser(
        'whitelist', help='build the whitelist and final thresholds')
    _add_common(whitelist)
    _add_whitelist(whitelist)
    whitelist.add_argument('--interim', help='interim thresholds artifact')
    whitelist.set_defaults(func=cmd_whitelist)

    detect = commands.add_parser('detect', help='detect alerts')
    _add_common(detect)
    detect.add_argument('--final', help='final thresholds artifact')
    detect.add_argument('--series', help='hourly series CSV')
    detect.add_argument('--stream', action='store_true',
                        help='read observations from stdin, write alerts '
                             'to stdout')
    detect.add_argument('--include-suppressed', action='store_true')
    detect.add_argument('--unknown-node-policy',
                        choices=[p.value for p in UnknownNodePolicy])
    detect.set_defaults(func=cmd_detect)

    evaluation = commands.add_parser('evaluate', help='evaluate alerts')
    _add_common(evaluation)
    _add_whitelist(evaluation)
    evaluation.add_argument('--series', help='hourly series CSV')
    evaluation.add_argument('--whitelist', help='whitelist artifact')
    evaluation.add_argument('--no-whitelist', action='store_true')
    evaluation.add_argument('--bin-hours', type=int, default=24)
    evaluation.add_argument('--summary', action='store_true',
                            help='print the summary JSON to stdout')
    evaluation.set_defaults(func=cmd_evaluate)

    tune = commands.add_parser('tune', help='grid search the whitelist')
    _add_common(tune)
    _add_whitelist(tune)
    tune.add_argument('--series', help='hourly series CSV')
    tune.add_argument('--weeks-grid',
                      help='comma separated min_weeks values '
                           '(default: 1..backtest weeks)')
    tune.add_argument('--change-grid', default=DEFAULT_CHANGE_GRID,
                      help='comma separated max_change values')
    tune.set_defaults(func=cmd_tune)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging('INFO' if args.verbose else None)
    try:
        config = _overrides(args, load_config(args.config))
        return args.func(args, config)
    except FlapguardError as e:
        logger.debug('stage failed', exc_info=True)
        print(json.dumps(e.to_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
