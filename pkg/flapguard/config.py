import dataclasses
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

from flapguard.core.alerting import UnknownNodePolicy
from flapguard.core.baseline import BaselineConfig
from flapguard.core.synth import SynthConfig
from flapguard.core.whitelist import DEFAULT_BACKTEST_WEEKS, WhitelistCriteria
from flapguard.errors import ConfigError, MissingInput
from flapguard.util.util import canonical_json, sha256_bytes

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_SECTIONS = {
    'baseline': BaselineConfig,
    'whitelist': WhitelistCriteria,
    'synth': SynthConfig,
}


@dataclass(frozen=True)
class PathsConfig:
    """
    Input files and the artifact directory. Unset inputs default to the
    artifact names inside ``workdir``.
    """
    workdir: str = '.'
    events: Optional[str] = None
    cases: Optional[str] = None
    roster: Optional[str] = None
    event_format: str = 'jsonl'

    def __post_init__(self) -> None:
        if self.event_format not in ('jsonl', 'csv'):
            raise ConfigError("event_format must be 'jsonl' or 'csv'",
                              {'event_format': self.event_format})


@dataclass(frozen=True)
class PipelineConfig:
    """
    Configuration of the whole pipeline.

    Loaded from TOML with :func:`load_config`, overridden from the
    command line with :meth:`replace`.
    """
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    whitelist: WhitelistCriteria = field(default_factory=WhitelistCriteria)
    backtest_weeks: int = DEFAULT_BACKTEST_WEEKS
    unknown_node_policy: UnknownNodePolicy = UnknownNodePolicy.SKIP
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self) -> None:
        if not isinstance(self.backtest_weeks, int) \
                or self.backtest_weeks <= 0:
            raise ConfigError('backtest_weeks must be a positive integer',
                              {'backtest_weeks': self.backtest_weeks})
        try:
            policy = UnknownNodePolicy(self.unknown_node_policy)
        except ValueError:
            raise ConfigError(
                'unknown_node_policy must be one of '
                f'{[p.value for p in UnknownNodePolicy]}',
                {'unknown_node_policy': self.unknown_node_policy},
            )
        object.__setattr__(self, 'unknown_node_policy', policy)

    @property
    def seed(self) -> int:
        return self.synth.seed

    def replace(self, **changes: Any) -> 'PipelineConfig':
        """
        Copy with some fields changed. Section fields take a mapping of
        the section's own fields, eg
        ``config.replace(baseline={'buffer_days': 20})``.
        """
        updates: Dict[str, Any] = {}
        for name, value in changes.items():
            current = getattr(self, name)
            if dataclasses.is_dataclass(current) and isinstance(value,
                                                               Mapping):
                value = _build(type(current), name, {
                    **dataclasses.asdict(current), **value})
            updates[name] = value
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> Dict[str, Any]:
        doc = dataclasses.asdict(self)
        doc['unknown_node_policy'] = self.unknown_node_policy.value
        return doc

    def config_hash(self) -> str:
        return sha256_bytes(canonical_json(self.to_dict()).encode('utf-8'))


def _build(cls: type, section: str, values: Mapping[str, Any]) -> Any:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f'Unknown keys in [{section}]: {unknown}',
                          {'section': section, 'keys': unknown})
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f'Invalid [{section}] value: {e}',
                          {'section': section})


def config_from_dict(doc: Mapping[str, Any]) -> PipelineConfig:
    """
    Build a config from a parsed TOML document.

    Top-level ``seed`` sets ``synth.seed``; ``[detect]`` holds
    ``unknown_node_policy``.
    """
    doc = dict(doc)
    kwargs: Dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        values = dict(doc.pop(section, {}))
        if section == 'synth' and 'seed' in doc:
            values['seed'] = doc.pop('seed')
        kwargs[section] = _build(cls, section, values)
    kwargs['paths'] = _build(PathsConfig, 'paths', doc.pop('paths', {}))

    detect = dict(doc.pop('detect', {}))
    if 'unknown_node_policy' in detect:
        kwargs['unknown_node_policy'] = detect.pop('unknown_node_policy')
    if detect:
        raise ConfigError(f'Unknown keys in [detect]: {sorted(detect)}',
                          {'section': 'detect', 'keys': sorted(detect)})
    if 'backtest_weeks' in doc:
        kwargs['backtest_weeks'] = doc.pop('backtest_weeks')
    if doc:
        raise ConfigError(f'Unknown configuration keys: {sorted(doc)}',
                          {'keys': sorted(doc)})
    return PipelineConfig(**kwargs)


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Load a TOML config file; without a path, the defaults.

    Raises
    ------
    MissingInput
        If the file does not exist.
    ConfigError
        If the file is not valid TOML or a value is invalid.
    """
    if path is None:
        return PipelineConfig()
    try:
        with open(path, 'rb') as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise MissingInput(f'Config file {path} does not exist.',
                           {'path': path})
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'Cannot parse {path}: {e}', {'path': path})
    return config_from_dict(doc)
