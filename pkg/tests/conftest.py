import pytest

from dashsim import _kernel

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(params=_kernel.backends(), ids=lambda m: m.BACKEND)
def backend(request):
    """Every available kernel implementation."""
    return request.param


@pytest.fixture
def acceptance_report(request):
    """``report(label, ok, detail)`` prints one PASS/FAIL line and keeps it for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
