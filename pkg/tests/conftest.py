import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    lines = [value for status in ("passed", "failed")
             for report in terminalreporter.stats.get(status, [])
             if report.when == "call"
             for key, value in report.user_properties if key == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda text: int(text.split()[1])):
            terminalreporter.write_line(line)
