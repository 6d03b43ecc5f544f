import numpy as np
import pytest

from switchiv.dataset import from_arrays
from switchiv.simtrial import SimConfig


def write_csv(path, header, rows):
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def csv_file(tmp_path):
    def make(header, rows, name="subjects.csv"):
        return write_csv(tmp_path / name, header, rows)
    return make


def mirrored(times=(3.0, 5.0, 8.0, 13.0), events=(1, 1, 0, 1)):
    """Identical follow-up in both arms, no switching."""
    t = np.array(times * 2, dtype=float)
    e = np.array(events * 2)
    z = np.array([1] * len(times) + [0] * len(times))
    return from_arrays(z, t, e)


@pytest.fixture
def mirrored_arms():
    return mirrored()


# Confounded crossover: frailty drives both progression and switching (about 60%
# of control subjects switch).
CONFOUNDED = SimConfig(
    n=2000, beta=2e-4, frailty_mean=4e-4, prog_frailty=1.0, pd_effect=6e-4,
    switch_rule="hazard", switch_rate=1.3e-3, switch_pd=2.5, switch_frailty=1.0,
)

# Switching driven by measured time-varying state only (progression and time
# since progression); progression still shares the frailty with death.
PD_DRIVEN = SimConfig(
    n=2000, beta=2e-4, frailty_mean=4e-4, prog_frailty=1.0, pd_effect=6e-4,
    switch_rule="hazard", switch_rate=1e-3, switch_pd=2.5, switch_tsp=-0.002,
)


@pytest.fixture
def small_trial():
    from switchiv.simtrial import generate
    return generate(SimConfig(n=200, switch_rule="hazard", switch_rate=1e-3, switch_pd=2.0,
                              frailty_mean=4e-4, prog_frailty=1.0, pd_effect=6e-4), 11)


# acceptance verdicts, echoed in the terminal summary so they show without -s
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
