import hashlib
import json
import math
from datetime import datetime, timezone
from functools import lru_cache
from typing import Any, Union

import numpy as np

HOUR_SECONDS = 3600
HOURS_PER_DAY = 24
DAY_SECONDS = HOUR_SECONDS * HOURS_PER_DAY
WEEK_DAYS = 7
WEEK_HOURS = HOURS_PER_DAY * WEEK_DAYS
WEEK_SECONDS = WEEK_HOURS * HOUR_SECONDS

TIMESTAMP_FORMAT = '%Y-%m-%dT%H:%M:%SZ'


def parse_timestamp(value: Union[str, int, float]) -> int:
    """
    Parse an RFC 3339 timestamp or integer epoch seconds into
    UTC epoch seconds.

    Naive timestamps are interpreted as UTC. Sub-second precision is
    truncated towards the start of the second.

    Parameters
    ----------
    value : Union[str, int, float]
        Timestamp text or epoch seconds.

    Returns
    -------
    int
        UTC epoch seconds.

    Raises
    ------
    ValueError
        If the value is neither epoch seconds nor RFC 3339.
    """
    if isinstance(value, bool):
        raise ValueError(f'Not a timestamp: {value!r}')
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, float):
        if not math.isfinite(value) or not value.is_integer():
            raise ValueError(f'Epoch seconds must be integral: {value!r}')
        return int(value)
    if not isinstance(value, str):
        raise ValueError(f'Not a timestamp: {value!r}')
    return _parse_timestamp_text(value.strip())


@lru_cache(maxsize=65536)
def _parse_timestamp_text(text: str) -> int:
    if not text:
        raise ValueError('Empty timestamp')
    if text.lstrip('-').isdigit():
        return int(text)
    # fromisoformat() accepts a trailing 'Z' only from Python 3.11 on.
    if text[-1] in 'Zz':
        text = text[:-1] + '+00:00'
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return math.floor(dt.timestamp())


def format_timestamp(epoch_seconds: int) -> str:
    return datetime.fromtimestamp(
        int(epoch_seconds), tz=timezone.utc
    ).strftime(TIMESTAMP_FORMAT)


def floor_hour(epoch_seconds: int) -> int:
    return int(epoch_seconds) - int(epoch_seconds) % HOUR_SECONDS


def is_hour_aligned(epoch_seconds: int) -> bool:
    return int(epoch_seconds) % HOUR_SECONDS == 0


def hours_between(start: int, end: int) -> int:
    """
    Number of whole hours in [start, end), both ends hour-aligned.
    """
    return (int(end) - int(start)) // HOUR_SECONDS


def canonical_json(obj: Any) -> str:
    """
    Deterministic JSON rendering, used for hashing configuration.
    """
    return json.dumps(obj, sort_keys=True, separators=(',', ':'),
                      ensure_ascii=True)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()
