from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def fixture_inputs():
    """Prices and prepared (interpolated, lagged) signals of the bundled dataset."""
    from hsfp.cli import load_inputs, load_run_config

    return load_inputs(load_run_config(DATA / "config.ini"))


_CRITERIA: dict[int, tuple[str, bool]] = {}


class _Criterion:
    def __init__(self, number: int, text: str):
        self.number, self.text = number, text

    def __enter__(self):
        _CRITERIA[self.number] = (self.text, False)
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        _CRITERIA[self.number] = (self.text, ok)
        print(f"criterion {self.number:2d}: {'PASS' if ok else 'FAIL'}  {self.text}")
        return False


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion as pass or fail."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
