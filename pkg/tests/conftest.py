import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
