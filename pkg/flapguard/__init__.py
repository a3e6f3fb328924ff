# flake8: noqa

hard_dependencies = ("pyarrow", "numpy")
missing_dependencies = []

for dependency in hard_dependencies:
    try:
        __import__(dependency)
    except ImportError as e:
        missing_dependencies.append(f"{dependency}: {e}")

if missing_dependencies:
    raise ImportError(
        "Unable to import required dependencies:\n" + "\n".join(
            missing_dependencies
        )
    )
del hard_dependencies, dependency, missing_dependencies

from flapguard.arrow.event_table import EventTable  # noqa: F401

from flapguard.core.ingest import (  # noqa: F401
    EventRecord,
    HourBucket,
    HourlySeries,
    aggregate_hourly,
    infer_window,
    parse_events,
)

from flapguard.core.baseline import (  # noqa: F401
    BaselineConfig,
    ThresholdKind,
    ThresholdSet,
    compute_tau,
    compute_upper_bounds,
    compute_wow_buffer,
    generate_interim_thresholds,
    node_thresholds,
)

from flapguard.core.alerting import (  # noqa: F401
    AlertDetector,
    AlertRecord,
    Observation,
    UnknownNodePolicy,
    apply_whitelist,
    detect,
)

from flapguard.core.whitelist import (  # noqa: F401
    NodeAlertProfile,
    SupportCase,
    Whitelist,
    WhitelistCriteria,
    backtest_week,
    build_profiles,
    build_whitelist,
    finalize_thresholds,
    join_cases,
    run_backtest,
)

from flapguard.core.evaluation import (  # noqa: F401
    ConfusionCounts,
    alert_ratios,
    case_coverage,
    confusion,
    evaluate,
    event_histogram,
    grid_search,
    label_node_hours,
    retention,
)

from flapguard.core.synth import SynthConfig, generate_fleet  # noqa: F401

from flapguard.io.arrow import (  # noqa: F401
    read_cases,
    read_events,
    read_roster,
    read_series_csv,
    write_series_csv,
)

from flapguard.config import PipelineConfig, load_config  # noqa: F401

from flapguard._version import __version__

__doc__ = """
**flapguard** generates per-node alert thresholds for MAC-flap event
counts of network switches. Hourly counts are compared with the same
hour one week earlier; the spread of those week-over-week changes sets
an upper bound for every hour of the next week. Nodes that alert every
week without ever being tied to a support case are whitelisted, and
the resulting alerts are evaluated against support cases.
"""

_max_workers = 1


def get_max_workers():
    global _max_workers
    return _max_workers


def set_max_workers(max_workers: int):
    global _max_workers
    _max_workers = max_workers
