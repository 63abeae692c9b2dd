"""
Unit tests for the ordered worker pool.
"""

import pytest

from monodrift.utils import parallel


@pytest.fixture(autouse=True)
def reset_workers():
    parallel.set_default_workers(None)
    yield
    parallel.set_default_workers(None)


def test_map_ordered_preserves_order():
    """Test results come back in input order for any worker count."""
    items = list(range(50))
    serial = parallel.map_ordered(lambda x: x * x, items, workers=1)
    threaded = parallel.map_ordered(lambda x: x * x, items, workers=4)
    assert serial == threaded == [x * x for x in items]


def test_chunk_ranges():
    """Test that chunks cover the range exactly once."""
    chunks = parallel.chunk_ranges(10, 4)
    assert [list(c) for c in chunks] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    assert parallel.chunk_ranges(0, 4) == []


def test_default_workers_precedence(monkeypatch):
    """Test explicit setting beats the environment, which beats 1."""
    monkeypatch.delenv(parallel.WORKERS_ENV, raising=False)
    assert parallel.default_workers() == 1
    monkeypatch.setenv(parallel.WORKERS_ENV, "3")
    assert parallel.default_workers() == 3
    parallel.set_default_workers(2)
    assert parallel.default_workers() == 2
    monkeypatch.setenv(parallel.WORKERS_ENV, "not-a-number")
    parallel.set_default_workers(None)
    assert parallel.default_workers() == 1
