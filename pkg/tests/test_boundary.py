import numpy as np

from dynkinlab import (
    GridSpec,
    extract,
    get_fixture,
    monotonicity_check,
    solve_penalized,
)


class TestExtract:
    def test_no_contact_gives_minus_infinity(self):
        fx = get_fixture("gauss-free")
        bundle = solve_penalized(fx.model, fx.default_grid, 1e4)
        fb = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
        assert np.all(np.isneginf(fb.values))
        assert not fb.censored.any()
        fb_inf = extract(bundle, fx.model, side="lower", axis=0, orientation="inf")
        assert np.all(np.isposinf(fb_inf.values))

    def test_full_contact_is_censored(self, bump_upper_bundle):
        fx, bundle = bump_upper_bundle
        fb = extract(bundle, fx.model, side="upper", axis=0, orientation="inf")
        assert fb.censored.all()
        assert np.all(fb.values == bundle.grid.extent[0][0])

    def test_interior_boundary_on_tilted_fixture(self, tilt_bundle):
        fx, bundle = tilt_bundle
        fb = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
        assert np.all(np.isfinite(fb.values))
        assert not fb.censored.any()
        lo, hi = bundle.grid.extent[0]
        assert np.all((fb.values > lo) & (fb.values < hi))

    def test_refined_grid_localizes_boundary(self, tilt_bundle):
        # a finer-grid solve scanned at the same contact tolerance moves
        # the detected boundary by at most one coarse cell
        fx, coarse_b = tilt_bundle
        fine_grid = GridSpec(((-8.0, 8.0),), (321,), 160, 1.0)
        fine_b = solve_penalized(fx.model, fine_grid, 1e4)
        tol = coarse_b.eps_contact
        fb_c = extract(coarse_b, fx.model, side="lower", axis=0, orientation="sup", tol=tol)
        fb_f = extract(fine_b, fx.model, side="lower", axis=0, orientation="sup", tol=tol)
        fine_at_coarse_times = fb_f.values[::2]  # fine grid has twice the steps
        h = coarse_b.grid.spacing[0]
        assert np.max(np.abs(fb_c.values - fine_at_coarse_times)) <= h + 1e-12

    def test_idempotent_and_pure(self, tilt_bundle):
        fx, bundle = tilt_bundle
        fb1 = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
        fb2 = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
        assert np.array_equal(fb1.values, fb2.values)
        assert np.array_equal(fb1.censored, fb2.censored)

    def test_orientation_duality_under_mirror(self, tilt_bundle):
        # mirroring x -> -x turns the sup boundary into the negated inf one
        fx, bundle = tilt_bundle
        from dynkinlab import ModelSpec, ObstacleProcess

        m = fx.model
        mm = ModelSpec(
            sde=m.sde,
            f=lambda t, x, b: m.f(t, (-x[0],), b),
            phi=lambda t, x, b: m.phi(t, (-x[0],), b),
            lower=ObstacleProcess(0.0),
            upper=ObstacleProcess(2.0),
            horizon=1.0,
        )
        mirrored = solve_penalized(mm, bundle.grid, 1e4)
        fb = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
        fb_m = extract(mirrored, mm, side="lower", axis=0, orientation="inf")
        assert np.max(np.abs(fb.values + fb_m.values)) <= bundle.grid.spacing[0] + 1e-9

    def test_reflection_mass_vanishes_off_contact(self, tilt_bundle):
        # time-integrated k+ above the sup boundary is zero up to tolerance
        fx, bundle = tilt_bundle
        fb = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
        x = bundle.grid.axes()[0]
        dt = bundle.grid.dt
        mass = np.sum(bundle.k_plus.values[:-1], axis=0) * dt
        h = bundle.grid.spacing[0]
        for m in range(bundle.grid.steps + 1):
            above = x > fb.values[m] + h
            if above.any():
                assert np.max(mass[above]) <= 10 * bundle.eps_contact

    def test_csv_export(self, tilt_bundle, tmp_path):
        fx, bundle = tilt_bundle
        fb = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
        p = tmp_path / "fb.csv"
        fb.to_csv(p)
        lines = p.read_text().strip().split("\n")
        assert lines[0] == "t,S,censored"
        assert len(lines) == 2 + bundle.grid.steps


class TestMonotonicity:
    def test_tilted_fixture_is_monotone(self, tilt_bundle):
        fx, bundle = tilt_bundle
        rep = monotonicity_check(bundle, fx.model, axis=0, direction="increasing")
        assert rep.ok
        # holds far below the default 10 h^2 tolerance as well
        tight = monotonicity_check(bundle, fx.model, axis=0, direction="increasing",
                                   tol=1e-4)
        assert tight.ok

    def test_direction_mismatch_is_flagged(self, tilt_bundle):
        fx, bundle = tilt_bundle
        rep = monotonicity_check(bundle, fx.model, axis=0, direction="decreasing",
                                 tol=1e-4)
        assert not rep.ok
        assert rep.worst_location is not None

    def test_symmetric_fixture_monotone_on_half_lines(self):
        # even data: the gap is even in x, monotone on each half-line
        fx = get_fixture("bump-lower")
        grid = GridSpec(((-8.0, 8.0),), (161,), 80, 1.0)
        bundle = solve_penalized(fx.model, grid, 1e4)
        gap = bundle.V.values - 0.0
        mid = grid.nodes[0] // 2
        assert np.max(np.abs(gap - gap[:, ::-1])) <= 1e-9
        # the upper gap (upper - V) decays away from the center bump
        up = 1.0 / (1.0 + grid.axes()[0] ** 2)
        gap_up = up[None, :] - bundle.V.values
        diffs = np.diff(gap_up[:, mid:], axis=1)
        assert np.max(diffs) <= 1e-9

    def test_2d_cross_axis_report(self):
        fx = get_fixture("tilt-2d")
        grid = GridSpec(fx.default_grid.extent, (41, 41), 20, 1.0)
        bundle = solve_penalized(fx.model, grid, 1e4)
        rep = monotonicity_check(bundle, fx.model, axis=0, direction="increasing",
                                 cross_axis=1)
        assert rep.ok
        assert rep.boundary_direction in ("nonincreasing", "undetermined")
        assert rep.boundary_ok
