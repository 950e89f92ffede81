import json

import numpy as np
import pytest

from dynkinlab.cli import main
from dynkinlab.pdvi import SolutionBundle


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    rc = run_cli("solve", "--model", "bump-upper", "--grid=-8,8,101,50",
                 "--penalty", "100,10000", "--out", str(out), "--no-figures")
    assert rc == 0
    return out


class TestSolveCommand:
    def test_artifacts_present(self, solved_dir):
        for name in ("V.csv", "k_plus.csv", "k_minus.csv", "validation.json",
                     "residuals.json", "summary.json"):
            assert (solved_dir / name).exists()
        bundle = SolutionBundle.load(solved_dir / "bundle")
        assert bundle.metadata["penalty_n"] == 10000.0

    def test_round_trip_bundle(self, solved_dir):
        bundle = SolutionBundle.load(solved_dir / "bundle")
        again = SolutionBundle.load(solved_dir / "bundle")
        assert np.array_equal(bundle.V.values, again.V.values)

    def test_summary_schema(self, solved_dir):
        s = json.loads((solved_dir / "summary.json").read_text())
        assert set(s["results"]) >= {"validate", "solve", "residual",
                                     "validate_passed", "solve_passed", "residual_passed"}
        assert s["passed"] is True
        assert "timings" in s and set(s["timings"]) == set(s["stages"])

    def test_unknown_fixture_exits_2(self, tmp_path, capsys):
        rc = run_cli("solve", "--model", "no-such-fixture", "--out", str(tmp_path))
        assert rc == 2
        assert "no-such-fixture" in capsys.readouterr().err

    def test_bad_grid_exits_2(self, tmp_path):
        rc = run_cli("solve", "--model", "bump-upper", "--grid", "oops",
                     "--out", str(tmp_path))
        assert rc == 2


class TestStageFilter:
    def test_solve_residual_only_produces_no_game_artifacts(self, tmp_path):
        cfg = {
            "model": "bump-upper",
            "grid": {"extent": [[-8, 8]], "nodes": [101], "steps": 50},
            "penalty": [10000],
            "game": {"t0": 0.0, "x0": [0.0], "paths": 100, "steps": 10, "seed": 1},
            "stages": ["solve", "residual"],
            "out": str(tmp_path / "run"),
            "figures": False,
        }
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        rc = run_cli("run", "--config", str(p))
        assert rc == 0
        assert not (tmp_path / "run" / "game.json").exists()
        s = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert s["stages"] == ["solve", "residual"]

    def test_unknown_stage_exits_2(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"model": "bump-upper", "stages": ["fly"],
                                 "out": str(tmp_path / "o")}))
        assert run_cli("run", "--config", str(p)) == 2

    def test_missing_config_exits_2(self, tmp_path):
        assert run_cli("run", "--config", str(tmp_path / "nope.json")) == 2


class TestGameCommand:
    def test_game_from_saved_bundle(self, solved_dir, tmp_path):
        out = tmp_path / "game"
        rc = run_cli("game", "--model", "bump-upper", "--bundle",
                     str(solved_dir / "bundle"), "--t0", "0", "--x0", "0",
                     "--paths", "500", "--steps", "20", "--seed", "5",
                     "--out", str(out), "--no-figures")
        assert rc == 0
        g = json.loads((out / "game.json").read_text())
        assert g["within_3se"] is True
        assert g["estimate"]["mean"] == pytest.approx(1.0, abs=1e-9)

    def test_perturb_spec_parsing(self, solved_dir, tmp_path):
        out = tmp_path / "game2"
        rc = run_cli("game", "--model", "bump-upper", "--bundle",
                     str(solved_dir / "bundle"), "--paths", "200", "--steps", "10",
                     "--seed", "5", "--perturb", "upper:never;lower:fixed:0.5",
                     "--out", str(out), "--no-figures")
        assert rc == 0
        g = json.loads((out / "game.json").read_text())
        assert len(g["saddle"]["entries"]) == 2


class TestBoundaryCommand:
    def test_boundary_from_saved_bundle(self, solved_dir, tmp_path):
        out = tmp_path / "fb"
        rc = run_cli("boundary", "--model", "bump-upper", "--bundle",
                     str(solved_dir / "bundle"), "--side", "upper",
                     "--orientation", "inf", "--out", str(out), "--no-figures")
        assert rc == 0
        doc = json.loads((out / "boundary.json").read_text())
        assert doc["censored_fraction"] == 1.0


class TestTableCommand:
    def test_coupled_refinement_order_two(self, tmp_path):
        out = tmp_path / "table"
        rc = run_cli("table", "--model", "bump-upper",
                     "--refine", "51,50,100;101,100,400;201,200,1600",
                     "--out", str(out), "--no-figures")
        assert rc == 0
        lines = (out / "convergence.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:5] == ["nodes", "steps", "penalty_n", "h", "dt"]
        sup = [float(r.split(",")[header.index("sup_error")]) for r in lines[1:]]
        assert sup[0] > sup[1] > sup[2]
        orders = [r.split(",")[header.index("observed_order")] for r in lines[2:]]
        assert all(1.5 <= float(o) <= 2.5 for o in orders)

    def test_penalty_only_refinement(self, tmp_path):
        # fixed grid, penalty 1e2 -> 1e4: complementarity residual ~ 1/n
        out = tmp_path / "ptable"
        rc = run_cli("table", "--model", "bump-upper",
                     "--refine", "101,100,100;101,100,10000", "--out", str(out),
                     "--no-figures")
        lines = (out / "convergence.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        comp = [float(r.split(",")[header.index("comp_residual")]) for r in lines[1:]]
        assert comp[0] / comp[1] > 50.0


class TestValidateCommand:
    def test_validate_fixture(self, tmp_path):
        out = tmp_path / "val"
        rc = run_cli("validate", "--model", "exp-lower", "--samples", "500",
                     "--seed", "2", "--out", str(out))
        assert rc == 0
        doc = json.loads((out / "validation.json").read_text())
        assert doc["passed"] is True
        names = {c["name"] for c in doc["checks"]}
        assert {"D1 boundedness", "D2 Lipschitz", "V2 super-parabolicity",
                "V4 ordering", "V4 terminal"} <= names


class TestSummarySchema:
    def test_schema_stable_across_fixtures(self, tmp_path):
        # golden structural check: the same stage set yields the same
        # summary key tree for different fixtures
        def keys_of(doc, prefix=""):
            out = set()
            for k, v in doc.items():
                path = f"{prefix}.{k}" if prefix else k
                out.add(path)
                if isinstance(v, dict) and k not in ("timings", "results"):
                    out |= keys_of(v, path)
            return out

        trees = []
        for name, fixture in (("a", "bump-upper"), ("b", "exp-upper")):
            out = tmp_path / name
            rc = run_cli("solve", "--model", fixture, "--grid=-8,8,81,40",
                         "--penalty", "10000", "--out", str(out), "--no-figures")
            assert rc == 0
            doc = json.loads((out / "summary.json").read_text())
            trees.append((keys_of(doc), set(doc["results"])))
        assert trees[0][0] == trees[1][0]
        assert trees[0][1] == trees[1][1]


class TestLatticeCommand:
    def test_lattice_solve_writes_consistency(self, tmp_path):
        out = tmp_path / "lat"
        rc = run_cli("solve", "--model", "noise-martingale", "--lattice", "6",
                     "--out", str(out), "--no-figures")
        assert rc == 0
        doc = json.loads((out / "lattice_consistency.json").read_text())
        assert doc["max_residual"] < 1e-10
        lines = (out / "lattice.csv").read_text().strip().split("\n")
        assert lines[0].startswith("step,level,x1,V,Z")


class TestModelFileInputs:
    MODEL_DOC = {
        "name": "file-model",
        "horizon": 1.0,
        "sde": {"d_star": 1, "d1": 1, "d2": 0, "beta": 0, "gamma": "sqrt(2)"},
        "f": "-(1+x**2)**-3",
        "phi": 0.0,
        "lower": 0.0,
        "upper": "(1+x**2)**-1",
    }

    def test_validate_model_file(self, tmp_path):
        mf = tmp_path / "m.json"
        mf.write_text(json.dumps(self.MODEL_DOC))
        rc = run_cli("validate", "--model", str(mf), "--samples", "300",
                     "--box=-4,4", "--out", str(tmp_path / "v"))
        assert rc == 0

    def test_run_with_inline_model(self, tmp_path):
        cfg = {
            "model": self.MODEL_DOC,
            "grid": {"extent": [[-8, 8]], "nodes": [101], "steps": 50},
            "penalty": [10000],
            "stages": ["solve", "residual"],
            "out": str(tmp_path / "run"),
            "figures": False,
        }
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        assert run_cli("run", "--config", str(p)) == 0
        s = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert s["model"] == "file-model" and s["passed"]
