import numpy as np
import pytest
from hypothesis import strategies as st

from survadj import validate_dataset


def make_data(time, status=None, group=None, x=None, names=None):
    time = np.asarray(time, float)
    n = len(time)
    status = np.ones(n, int) if status is None else np.asarray(status)
    if group is None:
        group = np.arange(n) % 2
    return validate_dataset(time, status, group, x, names)


def random_data(rng, n, p=2, censor=0.3, ties=False):
    time = rng.exponential(1.0, n)
    if ties:
        time = np.ceil(time * 4) / 4 + 0.25
    status = (rng.random(n) > censor).astype(int)
    group = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    x = rng.normal(size=(n, p))
    return validate_dataset(time, status, group, x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def datasets(draw, min_n=3, max_n=25, censoring=True, ties=True):
    n = draw(st.integers(min_n, max_n))
    grid = st.integers(1, 8) if ties else st.integers(1, 10_000)
    time = np.array(draw(st.lists(grid, min_size=n, max_size=n)), float) / 2.0
    if censoring:
        status = np.array(draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    else:
        status = np.ones(n, int)
    group = np.array(draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    group[0], group[1] = 0, 1
    x = np.array(draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n)))[:, None]
    return validate_dataset(time, status, group, x, ["X1"])


@st.composite
def step_curves(draw, max_jumps=8, lo=-0.5, hi=1.5):
    k = draw(st.integers(0, max_jumps))
    times = np.unique(np.array(draw(st.lists(st.floats(0.0, 10.0), min_size=k,
                                             max_size=k))))
    vals = np.array(draw(st.lists(st.floats(lo, hi), min_size=len(times),
                                  max_size=len(times))))
    init = draw(st.floats(lo, hi))
    from survadj import StepCurve
    return StepCurve(times, vals, init)
