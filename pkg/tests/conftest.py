import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_terminal_summary(terminalreporter):
    """Print the per-criterion lines recorded by the acceptance suite."""
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, 'when', None) != 'call':
                continue
            lines += [v for k, v in getattr(rep, 'user_properties', ())
                      if k == 'acceptance']
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
