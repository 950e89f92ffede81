from dynkinlab import LatticeConfig, extract, get_fixture, solve_on_lattice
from dynkinlab import figures  # noqa: F401  (module import exercises the Agg setup)
from dynkinlab.figures import boundary_plot, lattice_fan, reflection_profiles, value_snapshots


def test_report_figures_render_to_files(tmp_path, tilt_bundle):
    fx, bundle = tilt_bundle
    value_snapshots(bundle, fx.model, tmp_path / "v.png")
    reflection_profiles(bundle, tmp_path / "k.png")
    fb = extract(bundle, fx.model, side="lower", axis=0, orientation="sup")
    boundary_plot(fb, tmp_path / "fb.png")
    for name in ("v.png", "k.png", "fb.png"):
        assert (tmp_path / name).stat().st_size > 1000


def test_lattice_fan_renders(tmp_path):
    fx = get_fixture("noise-martingale")
    lat = solve_on_lattice(fx.model, fx.default_grid, LatticeConfig(steps=6))
    lattice_fan(lat, tmp_path / "fan.png")
    assert (tmp_path / "fan.png").stat().st_size > 1000
