import logging
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import WORKED_CUMSUM, make_hosts
from sdnlb.monitor import (
    ClusterState,
    EmptyClusterError,
    build_cumsum,
    change_threshold,
    clamp_load,
    load_imbalance,
    refresh,
)


def test_worked_cumsum(worked_hosts):
    got = build_cumsum(worked_hosts).values
    assert len(got) == 8
    for a, b in zip(got, WORKED_CUMSUM):
        assert abs(a - b) < 1e-9


def test_single_idle_host():
    assert build_cumsum(make_hosts([0.0])).values == (1.0,)


def test_cumsum_empty():
    with pytest.raises(EmptyClusterError, match="empty cluster"):
        build_cumsum([])


def test_cumsum_prefix_oracle_100_hosts():
    rng = random.Random(3)
    loads = [rng.random() for _ in range(100)]
    got = build_cumsum(make_hosts(loads)).values
    acc, want = 0.0, []
    for x in loads:
        acc = acc + (1 - x)
        want.append(acc)
    assert all(abs(a - b) <= 1e-12 for a, b in zip(got, want))
    assert abs(got[-1] - math.fsum(1 - x for x in loads)) < 1e-12


def test_leading_dead_host_has_zero_width():
    s = build_cumsum(make_hosts([None, 0.5])).values
    assert s[0] == 0.0 and s[1] == 0.5


def test_imbalance_equal_loads():
    assert load_imbalance(make_hosts([0.3] * 6)) == 0.0


def test_imbalance_zero_one():
    assert load_imbalance(make_hosts([0.0, 1.0])) == 0.25


def test_imbalance_dead_counts_as_full():
    assert load_imbalance(make_hosts([0.0, None])) == 0.25


def _two_pass_variance(xs):
    mean = math.fsum(xs) / len(xs)
    return math.fsum((x - mean) ** 2 for x in xs) / len(xs)


def test_imbalance_two_pass_oracle():
    rng = random.Random(11)
    for _ in range(20):
        xs = [rng.random() for _ in range(50)]
        assert abs(load_imbalance(make_hosts(xs)) - _two_pass_variance(xs)) < 1e-12


def test_imbalance_empty():
    with pytest.raises(EmptyClusterError):
        load_imbalance([])


def test_change_threshold_cases():
    assert change_threshold([0.02, 0.05, 0.03]) == 0.05 - 0.02
    assert abs(change_threshold([0.02, 0.05, 0.03]) - 0.03) < 1e-15
    assert change_threshold([0.4] * 5) == 0.0
    with pytest.raises(ValueError):
        change_threshold([])


def test_change_threshold_fold_oracle():
    rng = random.Random(5)
    xs = [rng.random() for _ in range(1000)]
    lo = hi = xs[0]
    for x in xs[1:]:
        lo, hi = (x if x < lo else lo), (x if x > hi else hi)
    assert change_threshold(xs) == hi - lo


def _state(loads, t=0.03):
    return ClusterState(make_hosts(loads), vip="10.0.0.1", cluster_mac="02:00:00:00:00:01", change_threshold=t)


def test_refresh_small_move_not_changed():
    st_ = _state([0.10, 0.5])
    out = refresh(st_, [0.12, 0.5], [True, True])
    assert not out.changed


def test_refresh_failure_trips_threshold():
    st_ = _state([0.10, 0.5])
    out = refresh(st_, [0.10, 0.5], [False, True])
    assert out.changed and out.changed_hosts == (0,)
    assert st_.cumsum.values == (0.0, 0.5)
    assert st_.last_loads == [1.0, 0.5]


def test_refresh_exact_threshold_is_not_a_change():
    st_ = _state([0.25, 0.5], t=0.25)
    assert not refresh(st_, [0.5, 0.5], [True, True]).changed


def test_refresh_wrong_length():
    with pytest.raises(ValueError):
        refresh(_state([0.1, 0.2]), [0.1], [True])


def test_refresh_random_walk_oracle():
    rng = random.Random(9)
    n, t = 8, 0.03
    loads = [rng.random() for _ in range(n)]
    st_ = _state(loads, t)
    last = list(loads)
    for _ in range(200):
        loads = [min(1.0, max(0.0, x + rng.uniform(-0.06, 0.06))) for x in loads]
        live = [rng.random() > 0.1 for _ in range(n)]
        eff = [x if up else 1.0 for x, up in zip(loads, live)]
        want = any(abs(a - b) > t for a, b in zip(eff, last))
        assert refresh(st_, loads, live).changed == want
        last = eff


def test_clamp_logs(caplog):
    with caplog.at_level(logging.WARNING, logger="sdnlb.monitor"):
        assert clamp_load(1.3) == 1.0
        assert clamp_load(-0.1) == 0.0
    assert len(caplog.records) == 2
    assert clamp_load(0.4) == 0.4


# -- properties ------------------------------------------------------------

host_loads = st.lists(st.one_of(st.none(), st.floats(0.0, 1.0)), min_size=1, max_size=40)


@given(host_loads)
def test_cumsum_monotone_and_dead_width(loads):
    s = build_cumsum(make_hosts(loads)).values
    for i, x in enumerate(loads):
        prev = s[i - 1] if i else 0.0
        assert s[i] >= prev
        if x is None:
            assert s[i] == prev


@given(host_loads)
def test_cumsum_total(loads):
    s = build_cumsum(make_hosts(loads))
    assert abs(s.total - math.fsum(1 - x for x in loads if x is not None)) < 1e-12


@given(host_loads)
def test_refresh_idempotent(loads):
    st_ = _state([0.5] * len(loads))
    vals = [0.0 if x is None else x for x in loads]
    live = [x is not None for x in loads]
    refresh(st_, vals, live)
    before = st_.cumsum
    out = refresh(st_, vals, live)
    assert not out.changed and st_.cumsum == before


@given(host_loads)
def test_imbalance_bounds(loads):
    d = load_imbalance(make_hosts(loads))
    assert 0.0 <= d <= 0.25 + 1e-12
