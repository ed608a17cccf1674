import pytest

from fpa_autobid.learning import RepeatedGame, run_repeated

HEDGE_GAME = RepeatedGame((1.0, 0.5), (1.0, 1.0), 0.3, 0.05, 50_000)
HEDGE_SEEDS = range(10)

# acceptance lines, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def hedge_runs():
    """Ten seeded hedge runs on the reference game, shared across modules (about 5 s each)."""
    return [run_repeated(HEDGE_GAME, seed=s) for s in HEDGE_SEEDS]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
