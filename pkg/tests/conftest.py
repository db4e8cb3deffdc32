"""Shared test plumbing: the acceptance-criteria summary block.

Acceptance tests record one line per criterion here; the hook prints them
after the normal pytest summary so a full run ends with a readable
pass/fail table regardless of output capturing.
"""

ACCEPTANCE = {}  # criterion number -> (label, "PASS" | "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(ACCEPTANCE):
        label, status, detail = ACCEPTANCE[num]
        line = f"criterion {num} ({label}): {status}"
        if detail:
            line = f"{line}  [{detail}]"
        terminalreporter.write_line(line)
