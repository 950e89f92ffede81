import numpy as np
import pytest

from dynkinlab import (
    GridSpec,
    LatticeConfig,
    get_fixture,
    martingale_consistency,
    solve_on_lattice,
    solve_penalized,
)
from dynkinlab.model import ModelSpec, ObstacleProcess, SdeCoefficients, evaluate
from dynkinlab.pdvi import _make_step, implicit_penalty_step


def brute_force_root(model, grid, steps, n=1e4):
    """Backward recursion over the full non-recombining noise tree.

    Independent of the recombining lattice structure: every one of the
    2^steps paths is walked separately, which checks the conditional
    expectation and the level indexing of the lattice.
    """
    dt = grid.horizon / steps
    sq = np.sqrt(dt)
    mesh = grid.mesh()
    coeffs = model.hjbi()
    times = np.linspace(0.0, grid.horizon, steps + 1)

    def slice_of(fn, t, b):
        return np.broadcast_to(np.asarray(evaluate(fn, t, mesh, b)), grid.nodes).astype(float)

    def value(m, level):
        b = level * sq
        if m == steps:
            return slice_of(model.phi, grid.horizon, b)
        up = value(m + 1, level + 1)
        dn = value(m + 1, level - 1)
        cond = 0.5 * (up + dn)
        z = (up - dn) / (2.0 * sq)
        from dynkinlab.grids import apply_noise_coupling

        coup = apply_noise_coupling(coeffs, z, times[m], grid, b=b)
        lo = slice_of(model.lower.value, times[m], b)
        hi = slice_of(model.upper.value, times[m], b)
        bc = np.clip(slice_of(model.phi, grid.horizon, b), lo, hi)
        step = _make_step(coeffs, grid, times[m], dt, b=b)
        v, _ = implicit_penalty_step(
            step, grid, cond, slice_of(model.f, times[m], b) + coup, lo, hi, bc, n, dt
        )
        return v

    return value(0, 0)


class TestDegeneracy:
    def test_noise_blind_model_collapses(self):
        fx = get_fixture("bump-upper-noise")
        grid = fx.default_grid
        lat = solve_on_lattice(fx.model, grid, LatticeConfig(steps=8))
        spread = max(np.max(np.abs(lat.V[m] - lat.V[m][0])) for m in range(9))
        assert spread <= 1e-10
        assert max(np.max(np.abs(z)) for z in lat.Z) <= 1e-10
        det = solve_penalized(get_fixture("bump-upper").model, grid, 1e4)
        assert np.max(np.abs(lat.root_slice() - det.V.values[0])) <= 1e-10

    def test_d2_must_be_one(self):
        fx = get_fixture("bump-upper")
        with pytest.raises(ValueError):
            solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=2))


class TestMartingaleFixture:
    def test_value_is_current_noise_and_z_is_one(self):
        fx = get_fixture("noise-martingale")
        lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=16))
        for m in range(17):
            b = lat.b_values(m)
            assert np.max(np.abs(lat.V[m] - b[:, None])) < 1e-12
        assert max(np.max(np.abs(z - 1.0)) for z in lat.Z) < 1e-12

    def test_consistency_residual_roundoff(self):
        fx = get_fixture("noise-martingale")
        lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=8))
        rep = martingale_consistency(lat, fx.model)
        assert rep["max_residual"] < 1e-12


class TestSquaredNoise:
    def test_two_step_recursion_by_hand(self):
        # M = 2, dt = 1/2: terminal 0; V(1, +-1) = dt * b^2 = dt^2;
        # root = mean of children = dt^2 = 0.25.  Wide domain so the
        # truncation pin (decay length sqrt(a dt) ~ 0.7) cannot be felt.
        fx = get_fixture("noise-rate")
        grid = GridSpec(((-20.0, 20.0),), (81,), 2, 1.0)
        lat = solve_on_lattice(fx.model, grid, LatticeConfig(steps=2))
        mid = grid.nodes[0] // 2
        assert lat.V[1][0][mid] == pytest.approx(0.25, abs=1e-10)
        assert lat.V[1][1][mid] == pytest.approx(0.25, abs=1e-10)
        assert lat.root_slice()[mid] == pytest.approx(0.25, abs=1e-10)

    def test_brute_force_tree_matches_lattice(self):
        fx = get_fixture("noise-rate")
        grid = GridSpec(fx.default_grid.extent, fx.default_grid.nodes, 8, 1.0)
        lat = solve_on_lattice(fx.model, grid, LatticeConfig(steps=8))
        brute = brute_force_root(fx.model, grid, 8)
        assert np.max(np.abs(lat.root_slice() - brute)) < 1e-12

    def test_closed_form_accumulated_variance(self):
        # E[sum b_m^2 dt] = dt^2 M(M-1)/2 = T^2 (1 - 1/M) / 2
        fx = get_fixture("noise-rate")
        lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=64))
        mid = fx.default_grid.nodes[0] // 2
        got = lat.root_slice()[mid]
        assert got == pytest.approx(0.5 * (1 - 1 / 64), abs=1e-6)
        assert abs(got - 0.5) / 0.5 < 0.02

    def test_consistency_residual_small(self):
        fx = get_fixture("noise-rate")
        lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=16))
        rep = martingale_consistency(lat, fx.model)
        assert rep["max_residual"] < 1e-10


class TestReflectionSymmetry:
    def test_z_odd_under_noise_flip(self):
        # model even in b: flipping b -> -b negates Z and fixes V
        sde = SdeCoefficients(d_star=1, d1=1, d2=1, beta=0.0, gamma=np.sqrt(2.0),
                              theta=0.0, b_dependence="markov-in-b")
        def phi(t, x, b):
            return (b if b is not None else 0.0) ** 2 + 0.0 * x[0]
        m = ModelSpec(sde=sde, f=0.0, phi=phi, lower=ObstacleProcess(-1e6),
                      upper=ObstacleProcess(1e6), horizon=1.0)
        grid = GridSpec(((-8.0, 8.0),), (41,), 8, 1.0)
        lat = solve_on_lattice(m, grid, LatticeConfig(steps=8))
        for m_ in range(8):
            v = lat.V[m_]
            z = lat.Z[m_]
            assert np.max(np.abs(v - v[::-1])) < 1e-12   # V even in level
            assert np.max(np.abs(z + z[::-1])) < 1e-12   # Z odd in level

    def test_obstacles_respected_on_lattice(self):
        fx = get_fixture("bump-upper-noise")
        lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=8))
        mesh = fx.default_grid.mesh()
        up = np.broadcast_to(1.0 / (1.0 + mesh[0] ** 2), fx.default_grid.nodes)
        eps = lat.metadata["eps_contact"]
        for m in range(8):
            assert np.max(lat.V[m] - up[None, :]) <= eps
            assert np.min(lat.V[m]) >= -eps


class TestLatticeQueries:
    def test_interpolation_at_nodes(self):
        fx = get_fixture("noise-martingale")
        lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=8))
        dt = lat.dt
        sq = lat.sqrt_dt
        got = lat.at(2 * dt, np.array([[0.0]]), np.array([2 * sq]))
        assert got[0] == pytest.approx(2 * sq, abs=1e-12)

    def test_csv_export(self, tmp_path):
        fx = get_fixture("noise-martingale")
        grid = GridSpec(((-2.0, 2.0),), (5,), 3, 1.0)
        lat = solve_on_lattice(fx.model, grid, LatticeConfig(steps=3))
        p = tmp_path / "lat.csv"
        lat.to_csv(p)
        lines = p.read_text().strip().split("\n")
        assert lines[0] == "step,level,x1,V,Z,k_plus,k_minus"
        # nodes per step: 1 + 2 + 3 + 4 = 10, times 5 space nodes
        assert len(lines) == 1 + 10 * 5


class TestDiagnostics:
    def test_dz_reported_as_diagnostic(self):
        # x-independent Z => zero spatial derivative; the report carries it
        fx = get_fixture("noise-martingale")
        lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=6))
        rep = martingale_consistency(lat, fx.model)
        assert "dz_sup_per_step" in rep
        assert max(rep["dz_sup_per_step"]) < 1e-10
