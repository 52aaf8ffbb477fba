import warnings

import numba

warnings.filterwarnings("ignore", message=".*TBB.*", category=numba.NumbaWarning)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    rows = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                rows.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(rows):
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
