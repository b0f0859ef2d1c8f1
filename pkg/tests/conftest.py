import pytest


@pytest.fixture
def criterion(record_property):
    """Tag an acceptance test: criterion(n, detail) stores a summary line."""

    def tag(number: int, detail: str = ""):
        record_property("criterion", number)
        record_property("detail", detail)

    return tag


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props:
                continue
            n = props["criterion"]
            ok = outcome == "passed"
            prev = lines.get(n)
            ok = ok and (prev is None or prev[0])
            detail = props.get("detail", "")
            lines[n] = (ok, detail if prev is None or not ok else prev[1])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        ok, detail = lines[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
