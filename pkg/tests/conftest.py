import pytest

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class Recorder:
    def __init__(self, number: int):
        self.number = number

    def __call__(self, passed: bool, detail: str):
        ACCEPTANCE[self.number] = (bool(passed), detail)
        print(f"criterion {self.number}: {'PASS' if passed else 'FAIL'} {detail}")
        assert passed, detail


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return Recorder(marker.args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}  {detail}")
