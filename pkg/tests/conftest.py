import sys
from pathlib import Path

# lets test modules import the shared reference helpers in oracles.py
sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
