import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynkinlab import (
    GridSpec,
    ModelSpec,
    ObstacleProcess,
    SdeCoefficients,
    estimate_value,
    fixed_time,
    get_fixture,
    hit_lower,
    hit_upper,
    never,
    payoff,
    saddle_check,
    simulate,
    solve_penalized,
)
from dynkinlab.game import GameEvaluator, random_stop
from conftest import heat_value


def game_model(f=0.0, lower=None, upper=None, phi=0.0):
    sde = SdeCoefficients(d_star=1, d1=1, d2=0, beta=0.0, gamma=np.sqrt(2.0))
    return ModelSpec(
        sde=sde, f=f, phi=phi,
        lower=ObstacleProcess(lower if lower is not None else -10.0),
        upper=ObstacleProcess(upper if upper is not None else 10.0),
        horizon=1.0,
    )


@pytest.fixture(scope="module")
def small_batch():
    m = game_model()
    return m, simulate(m, 0.0, [0.0], 64, 8, seed=21)


class TestPayoff:
    def test_both_wait_until_terminal(self, small_batch):
        m, batch = small_batch
        m2 = game_model(f=1.0, phi=lambda t, x, b: x[0] ** 2)
        S = batch.steps
        got = payoff(m2, batch, 0, S, S)
        assert got == pytest.approx(1.0 + batch.X[0, -1, 0] ** 2, abs=1e-12)

    def test_immediate_upper_stop(self, small_batch):
        m, batch = small_batch
        m2 = game_model(f=5.0, upper=lambda t, x, b: 2.0 + x[0] ** 2)
        got = payoff(m2, batch, 3, 5, 0)
        assert got == pytest.approx(2.0, abs=1e-12)  # running integral empty

    def test_lower_stop_hand_computed(self):
        # frozen 4-step path with f = 1: payoff = tau1*dt + lower(X_tau1)
        m = game_model(f=1.0, lower=lambda t, x, b: np.cos(x[0]))
        batch = simulate(m, 0.0, [0.0], 1, 4, seed=33)
        tau1 = 2
        x_at = batch.X[0, 2, 0]
        got = payoff(m, batch, 0, tau1, 4)
        assert got == pytest.approx(2 * 0.25 + np.cos(x_at), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 8), st.integers(0, 8))
    def test_exactly_one_settlement(self, tau1, tau2):
        m = game_model(lower=lambda t, x, b: -5.0 + 0 * x[0],
                       upper=lambda t, x, b: 7.0 + 0 * x[0],
                       phi=lambda t, x, b: 1.0 + 0 * x[0])
        batch = simulate(m, 0.0, [0.0], 16, 8, seed=2)
        ev = GameEvaluator(m, batch)
        t1 = np.full(16, tau1)
        t2 = np.full(16, tau2)
        values, running, settle, masks, exited = ev.payoffs(t1, t2)
        total = (masks["lower"].astype(int) + masks["upper"].astype(int)
                 + masks["terminal"].astype(int))
        assert np.all(total == 1)
        expect = {True: -5.0, False: 7.0}
        if tau1 < min(tau2, 8):
            assert np.all(settle == -5.0)
        elif tau2 <= tau1 and tau2 < 8:
            assert np.all(settle == 7.0)
        else:
            assert np.all(settle == 1.0)

    def test_monotone_in_running_cost(self, small_batch):
        m, batch = small_batch
        lowm = game_model(f=lambda t, x, b: np.sin(x[0]))
        highm = game_model(f=lambda t, x, b: np.sin(x[0]) + 0.3)
        ev_lo = GameEvaluator(lowm, batch)
        ev_hi = GameEvaluator(highm, batch)
        rng = np.random.default_rng(0)
        t1 = rng.integers(0, 9, 64)
        t2 = rng.integers(0, 9, 64)
        v_lo, *_ = ev_lo.payoffs(t1, t2)
        v_hi, *_ = ev_hi.payoffs(t1, t2)
        assert np.all(v_hi - v_lo >= -1e-12)


class TestEstimate:
    def test_never_never_matches_heat_value(self):
        fx = get_fixture("gauss-free")
        grid = fx.default_grid
        bundle = solve_penalized(fx.model, grid, 1e4)
        batch = simulate(fx.model, 0.0, [0.0], 40_000, 50, seed=17)
        est = estimate_value(fx.model, bundle, 0.0, [0.0], never(), never(), batch)
        assert abs(est.mean - heat_value(0.0, 0.0)) <= 3 * est.se
        assert est.exit_count == 0

    def test_breakdown_sums_to_mean(self):
        fx = get_fixture("two-sided-game")
        grid = GridSpec(((-8.0, 8.0),), (201,), 100, 1.0)
        bundle = solve_penalized(fx.model, grid, 1e4)
        batch = simulate(fx.model, 0.0, [0.0], 2000, 50, seed=5)
        est = estimate_value(fx.model, bundle, 0.0, [0.0],
                             hit_lower(bundle), hit_upper(bundle), batch)
        assert sum(est.breakdown.values()) == pytest.approx(est.mean, abs=1e-12)

    def test_contact_at_start_zero_variance(self):
        # upper == lower at x0: both hit rules fire immediately
        band = lambda t, x, b: 1.0 / (1.0 + x[0] ** 2)
        m = game_model(lower=band, upper=band, phi=band)
        grid = GridSpec(((-8.0, 8.0),), (201,), 100, 1.0)
        bundle = solve_penalized(m, grid, 1e4)
        batch = simulate(m, 0.0, [0.0], 500, 20, seed=1)
        est = estimate_value(m, bundle, 0.0, [0.0], hit_lower(bundle), hit_upper(bundle), batch)
        assert est.se == 0.0
        assert est.mean == pytest.approx(1.0, abs=1e-12)

    def test_exit_warning_over_threshold(self):
        m = game_model()
        grid = GridSpec(((-0.5, 0.5),), (21,), 20, 1.0)  # tiny domain forces exits
        bundle = solve_penalized(m, grid, 1e3)
        batch = simulate(m, 0.0, [0.0], 400, 20, seed=2)
        est = estimate_value(m, bundle, 0.0, [0.0], never(), never(), batch)
        assert est.exit_count > 4
        assert est.warnings

    def test_wrong_start_rejected(self, small_batch):
        m, batch = small_batch
        grid = GridSpec(((-8.0, 8.0),), (51,), 8, 1.0)
        bundle = solve_penalized(m, grid, 1e3)
        with pytest.raises(ValueError):
            estimate_value(m, bundle, 0.5, [0.0], never(), never(), batch)


class TestSaddle:
    def test_equilibrium_vs_itself_has_zero_margin(self):
        fx = get_fixture("two-sided-game")
        grid = GridSpec(((-8.0, 8.0),), (201,), 100, 1.0)
        bundle = solve_penalized(fx.model, grid, 1e4)
        batch = simulate(fx.model, 0.0, [0.0], 1000, 50, seed=9)
        perturbs = [
            ("upper", hit_upper(bundle)),
            ("lower", hit_lower(bundle)),
        ]
        rep = saddle_check(fx.model, bundle, 0.0, [0.0], perturbs, batch)
        for e in rep.entries:
            assert e.margin == 0.0 and e.se == 0.0 and e.ok

    def test_margins_positive_for_crude_deviations(self):
        fx = get_fixture("two-sided-game")
        grid = GridSpec(((-8.0, 8.0),), (401,), 200, 1.0)
        bundle = solve_penalized(fx.model, grid, 1e4)
        batch = simulate(fx.model, 0.0, [0.0], 8000, 100, seed=13)
        perturbs = [
            ("upper", fixed_time(0.25)),
            ("upper", never()),
            ("lower", fixed_time(0.0)),
            ("lower", random_stop(3)),
        ]
        rep = saddle_check(fx.model, bundle, 0.0, [0.0], perturbs, batch)
        assert rep.all_ok
        # stopping immediately at the lower obstacle gives up real value
        immediate = [e for e in rep.entries if e.label.startswith("fixed-time@0")]
        assert any(e.margin > 0.1 for e in immediate)
