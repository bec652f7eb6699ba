import pytest
from hypothesis import HealthCheck, settings

from wearbed.harness import simulate
from wearbed.scenarios import dynamic_path, failover_master_down, static_checkpoints

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def static_run():
    return simulate(static_checkpoints())


@pytest.fixture(scope="session")
def failover_run():
    return simulate(failover_master_down())


@pytest.fixture(scope="session")
def dynamic_run():
    return simulate(dynamic_path())


# --- acceptance bookkeeping ------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    ok = _CRITERIA.get(n, (title, True))[1] and not rep.failed
    if rep.when == "call" or rep.failed:
        _CRITERIA[n] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {title}")


@pytest.fixture(scope="session")
def stress_sweep(tmp_path_factory):
    """The 60-cell grid at 5 s per cell, run once with a single worker."""
    import time
    from wearbed.harness import run_sweep
    from wearbed.scenarios import stress_default
    out = tmp_path_factory.mktemp("sweep_jobs1")
    t0 = time.perf_counter()
    result = run_sweep(stress_default(5.0), out, jobs=1)
    return result, out, time.perf_counter() - t0
