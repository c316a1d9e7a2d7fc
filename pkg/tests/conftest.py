import pytest
from hypothesis import settings

from affordkb.datasets import SynthConfig, synth_generate

# fixed example sequences so repeated runs exercise identical inputs
settings.register_profile("repeatable", derandomize=True)
settings.load_profile("repeatable")

# criterion label -> passed?, collected from tests marked `acceptance`
_ACCEPTANCE: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[label] = _ACCEPTANCE.get(label, True) and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][2:])):
        terminalreporter.write_line(f"{'PASS' if _ACCEPTANCE[label] else 'FAIL'}  {label}")


@pytest.fixture(scope="session")
def reference_fixture(tmp_path_factory):
    """Seed 7, 20 objects per class, separation 2.0, environment p 0.95."""
    out = tmp_path_factory.mktemp("reference")
    return synth_generate(SynthConfig(per_class=20, separation=2.0, env_p=0.95, seed=7), out)


@pytest.fixture(scope="session")
def separated_fixture(tmp_path_factory):
    """Same generator at separation 5.0, used for zero-shot runs."""
    out = tmp_path_factory.mktemp("separated")
    return synth_generate(SynthConfig(per_class=20, separation=5.0, env_p=0.95, seed=7), out)
