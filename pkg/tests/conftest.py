import numpy as np
import pytest

from oraclerl.envs import CdpBuilder

SUITE_SIZE = 25
SUITE_ROOT = 1000

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def suite_config(algorithm: str, classes: str = "synthesize") -> dict:
    return {"algorithm": algorithm, "env": {"kind": "suite"},
            "classes": {"kind": classes, "n_distractors": 63}}


@pytest.fixture
def two_path_cdp():
    """H = 2, K = 2; both actions at the root lead to the same state."""
    b = CdpBuilder(2, 2)
    s0, (x0,) = b.add_state(0, "root")
    s1, (x1, x2) = b.add_state(1, "leaf", n_obs=2, obs_probs=[0.3, 0.7])
    b.set_initial({s0: 1.0})
    b.set_transition(s0, 0, s1)
    b.set_transition(s0, 1, s1)
    b.set_reward(x0, 0, 0.2)
    b.set_reward(x0, 1, 0.4)
    for x in (x1, x2):
        b.set_reward(x, 0, 0.5)
        b.set_reward(x, 1, 0.1)
    return b.build()


@pytest.fixture
def fork_cdp():
    """H = 2, K = 2; the root forks into two leaves with different rewards."""
    b = CdpBuilder(2, 2)
    s0, (x0,) = b.add_state(0, "root")
    sa, (xa,) = b.add_state(1, "left")
    sb, (xb,) = b.add_state(1, "right")
    b.set_initial({s0: 1.0})
    b.set_transition(s0, 0, sa)
    b.set_transition(s0, 1, sb)
    for a in range(2):
        b.set_reward(x0, a, 0.1 * a)
    b.set_reward(xa, 0, 0.9)
    b.set_reward(xa, 1, 0.3)
    b.set_reward(xb, 0, 0.2)
    b.set_reward(xb, 1, 0.6)
    return b.build()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
