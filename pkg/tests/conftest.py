import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def accept(request):
    """Record the outcome line of one acceptance criterion."""
    k = request.node.get_closest_marker("acceptance").args[0]

    def record(ok: bool, detail: str):
        line = f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
