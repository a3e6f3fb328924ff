import math

import numpy as np
import pytest

import flapguard
from flapguard.core.baseline import (
    BaselineConfig,
    ThresholdKind,
    WowBuffer,
    compute_tau,
    compute_upper_bounds,
    compute_wow_buffer,
    generate_interim_thresholds,
    node_thresholds,
)
from flapguard.core.alerting import exceedances
from flapguard.errors import ConfigError, InsufficientHistory
from flapguard.tests.conftest import (
    T0,
    constant_series,
    hour,
    make_series,
)

HISTORY_HOURS = 35 * 24
TARGET = hour(HISTORY_HOURS)


def loop_thresholds(counts, end, buffer_days=27):
    """
    Nested-loop rendition of the baseline: ``g(N, H)`` is hour ``H`` of
    the day ``N`` days before ``end``.
    """
    def g(n, h):
        return end - n * 24 + (24 - h)

    def f(t):
        return int(counts[t])

    x = []
    n = buffer_days
    while n > 0:
        h = 24
        while h > 0:
            t = g(n, h)
            x.append(abs((f(t) - f(t - 168)) / (f(t - 168) + 1)))
            h -= 1
        n -= 1
    mean = 0.0
    for v in x:
        mean += v
    mean /= len(x)
    variance = 0.0
    for v in x:
        variance += (v - mean) ** 2
    # population sigma
    sigma = math.sqrt(variance / len(x))
    tau = mean + 3 * sigma

    y = []
    n = 7
    while n > 0:
        h = 24
        while h > 0:
            t = g(n, h)
            y.append(math.ceil((tau + 1) * (f(t) + 1) - 1))
            h -= 1
        n -= 1
    return y


class TestBaselineOracle:

    def test_random_fleets_match_loop_rendition(self):
        rng = np.random.default_rng(20240101)
        for _ in range(200):
            n_nodes = int(rng.integers(1, 11))
            series = {
                f'n{i}': make_series(rng.integers(0, 51, HISTORY_HOURS),
                                     node_id=f'n{i}', org_id='o')
                for i in range(n_nodes)
            }
            batch = generate_interim_thresholds(series,
                                                target_week_start=TARGET)
            assert not batch.skipped
            for node_id, s in series.items():
                expected = loop_thresholds(s.counts, HISTORY_HOURS)
                assert batch[node_id].bounds.tolist() == expected

    def test_sparse_fleets_match_loop_rendition(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            counts = rng.poisson(0.3, HISTORY_HOURS)
            s = make_series(counts)
            assert node_thresholds(s, TARGET).bounds.tolist() == \
                loop_thresholds(counts, HISTORY_HOURS)


class TestBaselineAnchors:

    def test_all_zero_history(self):
        s = constant_series(0, 35)
        buffer = compute_wow_buffer(s, 27, TARGET)
        assert len(buffer) == 27 * 24
        assert compute_tau(buffer).tau == 0.0
        thresholds = node_thresholds(s, TARGET)
        assert thresholds.bounds.tolist() == [0] * 168
        week = np.zeros(168, dtype=np.int64)
        week[17] = 1
        observed = make_series(np.concatenate([s.counts, week]))
        assert exceedances(observed, thresholds).tolist() == [17]

    @pytest.mark.parametrize("value", [1, 7, 50])
    def test_constant_history(self, value):
        s = constant_series(value, 42)
        thresholds = node_thresholds(s, TARGET)
        assert compute_tau(compute_wow_buffer(s, 27, TARGET)).tau == 0.0
        assert thresholds.bounds.tolist() == [value] * 168
        assert exceedances(s, thresholds).size == 0

    def test_upper_bound_ratio(self):
        ratio = compute_tau(WowBuffer('n1', np.array([0.5, 0.1, 0.3])))
        assert ratio.tau == pytest.approx(0.7898979485566356, abs=1e-9)
        assert ratio.mean == pytest.approx(0.3)
        assert ratio.sample_size == 3

    def test_bound_of_five(self):
        ratio = compute_tau(WowBuffer('n1', np.array([0.5, 0.1, 0.3])))
        seed = constant_series(5, 7)
        thresholds = compute_upper_bounds(seed, ratio, hour(168))
        assert thresholds.bounds.tolist() == [10] * 168

    def test_sigma_multiplier(self):
        buffer = WowBuffer('n1', np.array([0.0, 2.0]))
        assert compute_tau(buffer, 0).tau == 1.0
        assert compute_tau(buffer, 2).tau == 3.0

    def test_empty_buffer(self):
        with pytest.raises(InsufficientHistory):
            compute_tau(WowBuffer('n1', np.array([])))


class TestBufferAlignment:

    def test_buffer_reads_last_days_before_target(self):
        counts = np.zeros(HISTORY_HOURS, dtype=np.int64)
        # one change just before the target and one just outside the buffer
        counts[HISTORY_HOURS - 1] = 9
        counts[HISTORY_HOURS - 27 * 24 - 1] = 3
        buffer = compute_wow_buffer(make_series(counts), 27, TARGET)
        assert buffer.values[-1] == 9.0
        assert buffer.values[:168].max() == 0.75
        assert np.count_nonzero(buffer.values) == 2

    def test_offset_buffer_is_disjoint_from_seed_week(self):
        counts = np.zeros(42 * 24, dtype=np.int64)
        counts[-1] = 100
        s = make_series(counts)
        target = hour(42 * 24)
        overlapping = node_thresholds(s, target)
        config = BaselineConfig(buffer_offset_days=7, lookback_days=41)
        disjoint = node_thresholds(s, target, config)
        assert overlapping.bounds[:-1].max() > 0
        assert disjoint.bounds[:-1].max() == 0
        assert disjoint.bounds[-1] == 100

    def test_short_history(self):
        with pytest.raises(InsufficientHistory):
            node_thresholds(constant_series(1, 21), hour(21 * 24))

    def test_target_after_series(self):
        with pytest.raises(InsufficientHistory):
            node_thresholds(constant_series(1, 35), hour(36 * 24))


class TestBaselineConfig:

    @pytest.mark.parametrize("kwargs", [
        dict(buffer_days=0),
        dict(sigma_multiplier=-1),
        dict(lookback_days=30),
        dict(buffer_offset_days=7),
        dict(buffer_offset_days=-1),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            BaselineConfig(**kwargs)

    def test_required_days(self):
        assert BaselineConfig().required_days == 34
        assert BaselineConfig(buffer_days=14, lookback_days=21).required_days \
            == 21


class TestGenerateInterimThresholds:

    def test_skip_list(self):
        series = {
            'a': constant_series(2, 35, node_id='a'),
            'b': constant_series(2, 14, node_id='b', start=hour(21 * 24)),
        }
        batch = generate_interim_thresholds(series, target_week_start=TARGET)
        assert list(batch) == ['a']
        assert [s.node_id for s in batch.skipped] == ['b']
        assert batch['a'].kind is ThresholdKind.INTERIM
        assert batch['a'].target_week_start == TARGET

    def test_three_weeks_skip_every_node(self):
        series = {n: constant_series(1, 21, node_id=n) for n in 'abc'}
        batch = generate_interim_thresholds(series)
        assert len(batch) == 0
        assert [s.node_id for s in batch.skipped] == ['a', 'b', 'c']

    def test_default_target_is_series_end(self):
        series = {'a': constant_series(3, 35, node_id='a')}
        batch = generate_interim_thresholds(series)
        assert batch.target_week_start == TARGET
        assert batch['a'].target_week_end == hour(HISTORY_HOURS + 168)

    def test_bounds_are_read_only(self):
        thresholds = node_thresholds(constant_series(1, 35), TARGET)
        with pytest.raises(ValueError):
            thresholds.bounds[0] = 0

    def test_process_pool_matches_serial(self):
        rng = np.random.default_rng(11)
        series = {
            f'n{i}': make_series(rng.integers(0, 20, HISTORY_HOURS),
                                 node_id=f'n{i}')
            for i in range(6)
        }
        serial = generate_interim_thresholds(series)
        workers = flapguard.get_max_workers()
        flapguard.set_max_workers(2)
        try:
            parallel = generate_interim_thresholds(series)
        finally:
            flapguard.set_max_workers(workers)
        assert list(parallel) == list(serial)
        for node_id in serial:
            assert parallel[node_id] == serial[node_id]

    def test_series_start_is_kept(self):
        s = constant_series(0, 35, start=T0.shift(-24))
        thresholds = node_thresholds(s, hour(34 * 24))
        assert thresholds.target_week_start == hour(34 * 24)
