import numpy as np

from infersched.streams import ARRIVALS, PATIENCE, ROUTING, SERVICES, RandomStreams


def test_same_seed_reproduces_exactly():
    a = RandomStreams(123).stream(SERVICES)
    b = RandomStreams(123).stream(SERVICES)
    assert [a.exponential(2.0) for _ in range(100)] == [b.exponential(2.0) for _ in range(100)]
    assert [a.uniform() for _ in range(100)] == [b.uniform() for _ in range(100)]


def test_named_streams_are_distinct():
    streams = RandomStreams(7)
    draws = {
        name: [streams.stream(name).uniform() for _ in range(8)]
        for name in (ARRIVALS, SERVICES, PATIENCE, ROUTING)
    }
    values = list(draws.values())
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            assert values[i] != values[j]


def test_indexed_substreams_are_distinct():
    streams = RandomStreams(7)
    a = [streams.stream(ARRIVALS, 0).uniform() for _ in range(8)]
    b = [streams.stream(ARRIVALS, 1).uniform() for _ in range(8)]
    assert a != b


def test_stream_cache_returns_same_object():
    streams = RandomStreams(7)
    assert streams.stream(SERVICES) is streams.stream(SERVICES)


def test_buffer_refill_is_seamless():
    # pull well past the internal block size and check the law still holds
    s = RandomStreams(99).stream(SERVICES)
    n = 20000
    draws = np.array([s.exponential(0.5) for _ in range(n)])
    assert abs(draws.mean() - 2.0) < 0.05
    u = np.array([s.uniform() for _ in range(n)])
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02


def test_randrange_bounds():
    s = RandomStreams(5).stream(ROUTING)
    vals = {s.randrange(7) for _ in range(2000)}
    assert vals == set(range(7))
