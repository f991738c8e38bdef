import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session", autouse=True)
def reference_cache(tmp_path_factory):
    """Keep reference-integral caches out of the user's home during tests."""
    path = os.environ.get("FLOWSAMPLER_CACHE") or str(tmp_path_factory.mktemp("refcache"))
    old = os.environ.get("FLOWSAMPLER_CACHE")
    os.environ["FLOWSAMPLER_CACHE"] = path
    yield path
    if old is None:
        os.environ.pop("FLOWSAMPLER_CACHE", None)
    else:
        os.environ["FLOWSAMPLER_CACHE"] = old


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
