import numpy as np
import pytest

from cardioresp.features import assemble, extract_patient
from cardioresp.synthetic import synth_cohort


@pytest.fixture(scope="session")
def small_cohort():
    return synth_cohort(4, 0.5, 1.0, seed=11)


@pytest.fixture(scope="session")
def small_extractions(small_cohort):
    recs, clin = small_cohort
    return [extract_patient(r, c) for r, c in zip(recs, clin)]


@pytest.fixture(scope="session")
def small_matrix(small_cohort):
    recs, clin = small_cohort
    return assemble(recs, clin)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the assertion fails the test when the check fails."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}"
        if detail:
            line += f" | {detail}"
        print(line)
        _CRITERIA[number] = line
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
