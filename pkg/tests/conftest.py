"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

ACCEPTANCE: dict[int, list] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        title = parts[0][0]
        failed = [p for _, p, ok, _ in parts if not ok]
        secs = sum(t for *_, t in parts)
        status = "PASS" if not failed else "FAIL"
        note = f"  failed: {', '.join(failed)}" if failed else ""
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title} ({secs:.1f} s){note}")
