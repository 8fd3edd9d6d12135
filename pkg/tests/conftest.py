import numpy as np
import pytest
from hypothesis import settings

from carstat.trial_data import TrialDataset, build_dataset

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

D0_ROWS = [(3, 1, "s1", 1), (5, 1, "s1", 1), (1, 0, "s1", 1),
           (2, 1, "s2", 0), (2, 0, "s2", 0), (4, 0, "s2", 0)]

D1_ROWS = [(2, 1, "s1", 1), (0, 0, "s1", 1), (1, 1, "s1", 0), (1, 0, "s1", 0),
           (6, 1, "s2", 1), (2, 0, "s2", 1), (3, 1, "s2", 0), (1, 0, "s2", 0)]

# acceptance criteria register their verdict lines here for the summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def d0():
    return build_dataset(D0_ROWS, 0.5)


@pytest.fixture
def d1():
    return build_dataset(D1_ROWS, 0.5)


def random_dataset(rng: np.random.Generator, n: int, n_strata: int, n_levels: int,
                   pi: float = 0.5, stratified_x: bool = False, shift: float = 0.0) -> TrialDataset:
    """Random dataset in which every (stratum, level) cell holds both arms."""
    while True:
        s = rng.integers(0, n_strata, n)
        x = s % n_levels if stratified_x else rng.integers(0, n_levels, n)
        a = (rng.random(n) < pi).astype(int)
        y = shift + rng.normal(size=n) * (1 + x) + 2.0 * a * x + s
        ds = TrialDataset.from_codes(y, a, s, x, range(n_strata), range(n_levels), pi)
        st = ds.stats
        occ = st.n_xs > 0
        if (st.has_axs[1] | ~occ).all() and (st.has_axs[0] | ~occ).all() and st.has_ax.all():
            return ds


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
