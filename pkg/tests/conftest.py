import numpy as np
import pytest

from dynkinlab import GridSpec, get_fixture, solve_penalized


@pytest.fixture(scope="session")
def grid_medium():
    return GridSpec(((-8.0, 8.0),), (201,), 200, 1.0)


@pytest.fixture(scope="session")
def bump_upper_bundle(grid_medium):
    fx = get_fixture("bump-upper")
    return fx, solve_penalized(fx.model, grid_medium, 1e4)


@pytest.fixture(scope="session")
def tilt_bundle():
    fx = get_fixture("tilt-1d")
    grid = GridSpec(((-8.0, 8.0),), (161,), 80, 1.0)
    return fx, solve_penalized(fx.model, grid, 1e4)


def heat_value(x, t, T=1.0, a=1.0, s2=1.0):
    """Closed form for the heat flow of a unit gaussian bump exp(-x^2/(2 s2))."""
    var = s2 + 2.0 * a * (T - t)
    return np.sqrt(s2 / var) * np.exp(-0.5 * x**2 / var)
