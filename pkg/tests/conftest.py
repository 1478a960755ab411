import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(0)


_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    import test_acceptance as acc
    terminalreporter.section("acceptance criteria")
    for name, label in acc.CRITERIA.items():
        if name in _acceptance:
            verdict = "PASS" if _acceptance[name] == "passed" else "FAIL"
            terminalreporter.write_line(f"{verdict}  {label}")
    if acc.DESK_REPORT:
        means = ", ".join(f"{k} {v:.2f}" for k, v in acc.DESK_REPORT.items())
        terminalreporter.write_line(f"desk mean test top-1 (%): {means}")
