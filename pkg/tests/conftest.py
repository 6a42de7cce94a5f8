import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def demo_corpus(tmp_path_factory):
    """The bundled synthetic corpus, written once per session."""
    from healthnet.synthetic import write_corpus

    root = tmp_path_factory.mktemp("corpus")
    return write_corpus(root)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    from healthnet.synthetic import CorpusParams, write_corpus

    root = tmp_path_factory.mktemp("small")
    return write_corpus(root, CorpusParams(n_documents=3000, n_users=500, conditions_per_category=60))


# -- per-criterion summary for the acceptance suite ------------------------------

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_runtest_logreport(report):
    mark = _criterion_of.get(report.nodeid)
    if mark is None:
        return
    number, title = mark
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "notes": []})
    failed = report.failed or (report.when == "call" and hasattr(report, "wasxfail"))
    if failed:
        entry["ok"] = False
        if hasattr(report, "wasxfail"):
            entry["notes"].append(f"expected failure: {report.wasxfail}")
    elif report.when == "call" and report.skipped:
        entry["ok"] = False
        entry["notes"].append("skipped")


_criterion_of: dict[str, tuple] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criterion_of[item.nodeid] = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        line = f"criterion {number:2d} {status}  {entry['title']}"
        if entry["notes"]:
            line += "  (" + "; ".join(dict.fromkeys(entry["notes"])) + ")"
        terminalreporter.write_line(line)
