import os

import pytest

from encdns_census.mock_resolver import MockConfig, MockResolver


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ENCDNS_LIVE_TESTS") == "1":
        return
    skip_live = pytest.mark.skip(
        reason="set ENCDNS_LIVE_TESTS=1 to run tests that need the Internet"
    )
    for item in items:
        if "live" in item.keywords:
            item.add_marker(skip_live)


@pytest.fixture(scope="session")
def mock_resolver():
    """One all-methods mock shared by tests that only read from it."""
    with MockResolver(MockConfig()) as resolver:
        yield resolver


@pytest.fixture
def make_mock():
    """Factory for per-test mocks; all are stopped at teardown."""
    started = []

    def factory(**config):
        resolver = MockResolver(MockConfig(**config))
        resolver.start()
        started.append(resolver)
        return resolver

    yield factory
    for resolver in started:
        resolver.stop()
