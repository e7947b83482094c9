import pytest

ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one acceptance line: acceptance(tag, description, ok, detail)."""

    def record(tag, description, ok, detail=""):
        ACCEPTANCE.append((tag, description, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {tag} {description} {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag, description, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {tag:<4} {description}  {detail}")
