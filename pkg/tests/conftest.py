import numpy as np
import pytest

from merlin_arthur.dataspace import (make_debate_chain, make_fish_fruit, random_selector,
                                     random_space)


@pytest.fixture
def fish_fruit():
    return make_fish_fruit()


@pytest.fixture
def chain8():
    return make_debate_chain(8)


def random_cases(n, seed=0, **kw):
    """Seeded (space, rng) pairs for sweeps."""
    for s in range(seed, seed + n):
        rng = np.random.default_rng(s)
        yield random_space(rng, **kw), rng


def random_pairs(n, seed=0, allow_empty=False, **kw):
    for space, rng in random_cases(n, seed, **kw):
        yield space, random_selector(space, rng, allow_empty=allow_empty)


# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
