import pytest


def pytest_addoption(parser):
    parser.addoption("--run-nightly", action="store_true", default=False,
                     help="run the slow nightly acceptance criteria")


def pytest_configure(config):
    config.addinivalue_line("markers", "nightly: hours-long criterion, opt in with --run-nightly")
    config.addinivalue_line("markers", "slow: takes minutes")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-nightly"):
        return
    skip = pytest.mark.skip(reason="nightly criterion; pass --run-nightly")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.summary():
        terminalreporter.write_line(line)
