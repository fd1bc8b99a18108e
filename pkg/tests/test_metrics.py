import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalesentry.metrics import (
    FIVE_XX_SERVICE,
    CounterStore,
    Labels,
    QueryWindow,
    labels_for,
    status_class,
)

from oracles import naive_increase

TIERS = ("service", "honeypot")
CODES = (200, 403, 404, 499, 503)


def test_status_classes():
    assert [status_class(c) for c in (200, 404, 499, 503, 302)] == ["2xx", "4xx", "499", "5xx", "other"]
    assert labels_for("service", 503) == Labels("service", "5xx", 503)


def test_increase_examples():
    store = CounterStore()
    for t in (1.0, 2.0, 3.0, 10.0):
        store.record(t, labels_for("service", 503))
    store.record(10.0, labels_for("service", 200))
    store.record(11.0, {"tier": "honeypot", "status_class": "5xx", "status_code": 503})
    assert store.increase(FIVE_XX_SERVICE, 300, 10.0) == 4
    # half-open window: t=1 falls out when now - duration == 1
    assert store.increase(FIVE_XX_SERVICE, QueryWindow(9.0), 10.0) == 3
    assert store.increase(FIVE_XX_SERVICE, 5, 5.0) == 3
    assert store.increase({"tier": "service"}, 300, 10.0) == 5
    assert store.increase(None, 300, 11.0) == 6
    assert store.increase(lambda k: k.status_code == 503, 1, 11.0) == 1
    assert store.total() == 6 and len(store) == 6


def test_record_rejects_time_regression():
    store = CounterStore()
    store.record(5.0, labels_for("service", 200))
    with pytest.raises(ValueError):
        store.record(4.0, labels_for("service", 200))


def test_window_must_be_positive():
    with pytest.raises(ValueError):
        QueryWindow(0)


def test_export_csv(tmp_path):
    store = CounterStore()
    store.record_many([(0.5, labels_for("service", 503)), (1.5, labels_for("service", 503))])
    path = tmp_path / "m.csv"
    store.export_csv(path)
    assert path.read_text().splitlines() == [
        "t,tier,status_class,status_code,count_cumulative",
        "1,service,5xx,503,1",
        "2,service,5xx,503,2",
    ]


events_strategy = st.lists(
    st.tuples(
        st.integers(0, 2000).map(lambda ms: ms / 4.0),
        st.sampled_from(TIERS),
        st.sampled_from(CODES),
    ),
    max_size=60,
)


@settings(max_examples=1000, deadline=None)
@given(events=events_strategy,
       duration=st.integers(1, 600).map(lambda d: d / 2.0),
       now=st.integers(0, 1100).map(float),
       tier=st.sampled_from(TIERS),
       cls=st.sampled_from(("2xx", "4xx", "499", "5xx")))
def test_increase_matches_naive_count(events, duration, now, tier, cls):
    store = CounterStore()
    for t, tr, code in sorted(events):
        store.record(t, labels_for(tr, code))
    naive = naive_increase([(t, tr, status_class(code)) for t, tr, code in events],
                           tier, cls, duration, now)
    assert store.increase({"tier": tier, "status_class": cls}, duration, now) == naive


@settings(max_examples=200, deadline=None)
@given(events=events_strategy, a=st.integers(1, 200), b=st.integers(1, 200),
       now=st.integers(0, 600).map(float))
def test_increase_additive_and_monotone(events, a, b, now):
    store = CounterStore()
    for t, tr, code in sorted(events):
        store.record(t, labels_for(tr, code))
    whole = store.increase(None, a + b, now)
    assert whole == store.increase(None, b, now) + store.increase(None, a, now - b)
    assert store.increase(None, a, now) <= store.increase(None, a + b, now)
    assert store.increase(None, a, now + b) <= store.total(now=now + b)
