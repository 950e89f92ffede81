"""Command-line interface: experiment orchestration and report emission.

Subcommands: validate, solve, boundary, game, table, and run (the full
pipeline driven by a JSON config).  Every stage writes CSV/JSON artifacts
into the output directory; the run command additionally writes a
summary.json with all norms, residuals, margins, seeds, and timings.
Artifacts are bit-reproducible for a fixed seed (timings excluded, which
is why they live only inside summary.json).

Exit codes: 0 all requested checks passed, 1 a stage ran but failed its
check (or crashed), 2 the configuration could not be parsed or resolved.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import figures
from .blattice import LatticeConfig, martingale_consistency, solve_on_lattice
from .boundary import extract, monotonicity_check
from .fixtures import fixture_keys, resolve_model
from .game import (
    StoppingStrategy,
    estimate_value,
    fixed_time,
    hit_lower,
    hit_upper,
    hit_sensitivity,
    never,
    optimal_stopping_value,
    random_stop,
    saddle_check,
)
from .grids import Field, GridSpec, _fmt
from .model import validate_model
from .pdvi import (
    PenaltySchedule,
    SolutionBundle,
    complementarity_residual,
    solve_one_obstacle,
    solve_penalized,
    solve_schedule,
)
from .simulate import simulate

DEFAULT_PENALTY = (10.0, 100.0, 1000.0, 10000.0)


class ConfigError(Exception):
    """Configuration could not be parsed or resolved (exit code 2)."""


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _parse_grid_string(s, horizon):
    try:
        parts = [float(v) for v in s.split(",")]
        if len(parts) != 4:
            raise ValueError
        lo, hi, n, m = parts
        return GridSpec(((lo, hi),), (int(n),), int(m), horizon)
    except ValueError:
        raise ConfigError(f"cannot parse grid spec {s!r}; expected 'xmin,xmax,N,M'")


def _grid_from_config(doc, horizon, fixture):
    if doc is None:
        if fixture is not None:
            g = fixture.default_grid
            return GridSpec(g.extent, g.nodes, g.steps, horizon)
        raise ConfigError("no grid given and the model is not a fixture with defaults")
    if isinstance(doc, str):
        return _parse_grid_string(doc, horizon)
    try:
        return GridSpec(
            extent=tuple(tuple(e) for e in doc["extent"]),
            nodes=tuple(doc["nodes"]),
            steps=int(doc["steps"]),
            horizon=horizon,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid config: {exc}")


def _parse_penalty(spec):
    if spec is None:
        return DEFAULT_PENALTY
    if isinstance(spec, str):
        try:
            vals = tuple(float(v) for v in spec.split(","))
        except ValueError:
            raise ConfigError(f"cannot parse penalty schedule {spec!r}")
    else:
        vals = tuple(float(v) for v in spec)
    if not vals:
        raise ConfigError("empty penalty schedule")
    return vals


def _parse_perturbations(spec, bundle):
    """'upper:fixed:0.25;upper:never;lower:random:2;lower:hit-wide:4' ..."""
    entries = []
    for raw in spec.split(";"):
        raw = raw.strip()
        if not raw:
            continue
        bits = raw.split(":")
        if len(bits) < 2:
            raise ConfigError(f"bad perturbation {raw!r}; expected side:kind[:arg]")
        side, kind = bits[0], bits[1]
        arg = bits[2] if len(bits) > 2 else None
        if kind == "fixed":
            strat = fixed_time(float(arg if arg is not None else 0.0))
        elif kind == "never":
            strat = never()
        elif kind == "random":
            strat = random_stop(int(arg if arg is not None else 0))
        elif kind == "hit-wide":
            factor = float(arg if arg is not None else 2.0)
            base = "hit-lower" if side == "lower" else "hit-upper"
            strat = StoppingStrategy(
                base, eps_hit=factor * bundle.eps_contact, ref=bundle,
                label=f"{base}-x{factor:g}",
            )
        else:
            raise ConfigError(f"unknown perturbation kind {kind!r}")
        entries.append((side, strat))
    return entries


def _standard_perturbations(bundle, t0, horizon):
    return [
        ("upper", fixed_time(t0 + 0.25 * (horizon - t0))),
        ("upper", never()),
        ("upper", random_stop(1)),
        ("lower", fixed_time(t0)),
        ("lower", random_stop(2)),
        ("lower", StoppingStrategy("hit-lower", eps_hit=4.0 * bundle.eps_contact,
                                   ref=bundle, label="hit-lower-x4")),
    ]


# --- stages --------------------------------------------------------------------


def stage_validate(model, cfg, outdir):
    box = cfg.get("box")
    if box is None:
        grid_doc = cfg.get("grid")
        if isinstance(grid_doc, dict):
            box = grid_doc["extent"]
        else:
            fx = cfg.get("_fixture")
            box = fx.default_grid.extent if fx is not None else [(-8.0, 8.0)] * model.sde.d_star
    report = validate_model(
        model, box, n_samples=int(cfg.get("samples", 10_000)), seed=int(cfg.get("seed", 0))
    )
    payload = {
        "passed": report.passed,
        "checks": [
            {"name": c.name, "passed": c.passed, "estimate": c.estimate,
             "worst_point": list(c.worst_point) if c.worst_point else None,
             "note": c.note}
            for c in report.checks
        ],
    }
    _write_json(outdir / "validation.json", payload)
    return report.passed, payload


def stage_solve(model, grid, cfg, outdir, figures_on):
    lattice_doc = cfg.get("lattice")
    if model.sde.b_dependence == "markov-in-b":
        steps = int(lattice_doc["steps"]) if lattice_doc else grid.steps
        lcfg = LatticeConfig(
            steps=steps,
            penalty_n=float((lattice_doc or {}).get("penalty_n", _parse_penalty(cfg.get("penalty"))[-1])),
        )
        lat = solve_on_lattice(model, grid, lcfg)
        lat.to_csv(outdir / "lattice.csv")
        consistency = martingale_consistency(lat, model)
        _write_json(outdir / "lattice_consistency.json",
                    {"max_residual": consistency["max_residual"],
                     "worst_node": list(consistency["worst_node"] or ()),
                     "per_step_max": consistency["per_step_max"]})
        if figures_on:
            figures.lattice_fan(lat, outdir / "lattice_fan.png")
        frag = {
            "kind": "lattice",
            "steps": lat.steps,
            "penalty_n": lcfg.penalty_n,
            "consistency_max_residual": consistency["max_residual"],
            "root_mid_value": float(lat.root_slice()[tuple(n // 2 for n in grid.nodes)]),
        }
        return lat, True, frag

    schedule = PenaltySchedule(_parse_penalty(cfg.get("penalty")))
    if model.one_obstacle:
        result = solve_one_obstacle(model, grid, n=schedule.n_values[-1],
                                    tol=schedule.tol, max_iter=schedule.max_iter)
        bundle = result.direct
        result.via_upper.save(outdir / "bundle_ceiling")
        frag = {
            "kind": "one-obstacle",
            "routes_sup_difference": result.sup_difference,
            "ceiling_max_k_minus": result.via_upper_max_k_minus,
        }
        ok = result.via_upper_max_k_minus <= 1e-6
    else:
        bundle = solve_schedule(model, grid, schedule)
        frag = {
            "kind": "penalty-schedule",
            "schedule": list(schedule.n_values),
            "cauchy_l2": bundle.metadata.get("cauchy_l2", []),
            "lower_violations": bundle.metadata.get("lower_violations", []),
            "upper_violations": bundle.metadata.get("upper_violations", []),
        }
        ok = not bundle.metadata.get("violation_diverging", False)
    bundle.save(outdir / "bundle")
    bundle.V.to_csv(outdir / "V.csv")
    bundle.k_plus.to_csv(outdir / "k_plus.csv")
    bundle.k_minus.to_csv(outdir / "k_minus.csv")
    frag.update(
        {
            "sup_V": bundle.V.sup_norm(),
            "max_lower_violation": bundle.metadata.get("max_lower_violation"),
            "max_upper_violation": bundle.metadata.get("max_upper_violation"),
            "eps_contact": bundle.eps_contact,
        }
    )
    if figures_on:
        figures.value_snapshots(bundle, model, outdir / "value_snapshots.png")
        figures.reflection_profiles(bundle, outdir / "reflection_profiles.png")
    return bundle, ok, frag


def stage_residual(model, bundle, outdir):
    report = complementarity_residual(bundle, model)
    payload = report.summary()
    scale = max(1.0, bundle.V.sup_norm())
    eps = bundle.eps_contact
    ok = (
        report.max_lower_violation <= eps * scale
        and report.max_upper_violation <= eps * scale
        and report.min_k_plus >= -1e-9
        and report.min_k_minus >= -1e-9
        and report.lower_integral_max <= 10 * eps * scale
        and report.upper_integral_max <= 10 * eps * scale
        and report.terminal_mismatch <= 1e-9 * scale
    )
    payload["passed"] = ok
    _write_json(outdir / "residuals.json", payload)
    with open(outdir / "residual_integrals.csv", "w") as fh:
        fh.write("node,lower_integral,upper_integral\n")
        lo = report.lower_integrals.ravel()
        hi = report.upper_integrals.ravel()
        for i, (a, b) in enumerate(zip(lo, hi)):
            fh.write(f"{i},{_fmt(a)},{_fmt(b)}\n")
    return ok, payload


def stage_boundary(model, bundle, cfg, outdir, figures_on):
    doc = cfg.get("boundary") or {}
    side = doc.get("side", "lower")
    axis = int(doc.get("axis", 0))
    orientation = doc.get("orientation", "sup")
    fb = extract(bundle, model, side=side, axis=axis, orientation=orientation)
    fb.to_csv(outdir / "boundary.csv")
    payload = {
        "side": side,
        "axis": axis,
        "orientation": orientation,
        "censored_fraction": float(np.mean(fb.censored)),
        "finite_fraction": float(np.mean(np.isfinite(fb.values))),
    }
    mono = doc.get("monotone") or (cfg.get("_fixture").monotone if cfg.get("_fixture") else None)
    if mono:
        rep = monotonicity_check(
            bundle, model, axis=int(mono.get("axis", 0)),
            direction=mono.get("direction", "increasing"),
            cross_axis=mono.get("cross_axis"),
            side=mono.get("side", "lower"),
            orientation=mono.get("orientation", "sup"),
        )
        payload["monotonicity"] = rep.summary()
        ok = rep.ok and (rep.boundary_ok is not False)
    else:
        ok = True
    if figures_on:
        figures.boundary_plot(fb, outdir / "boundary.png")
    _write_json(outdir / "boundary.json", payload)
    return ok, payload


def stage_game(model, bundle, extra, cfg, outdir, figures_on):
    doc = cfg.get("game") or {}
    t0 = float(doc.get("t0", 0.0))
    x0 = np.atleast_1d(np.asarray(doc.get("x0", 0.0), dtype=float))
    n_paths = int(doc.get("paths", 20_000))
    steps = int(doc.get("steps", 400))
    seed = int(doc.get("seed", cfg.get("seed", 0)))
    eps_hit = doc.get("eps_hit")
    batch = simulate(model, t0, x0, n_paths, steps, seed,
                     antithetic=bool(doc.get("antithetic", False)))
    if doc.get("dump_paths"):
        batch.dump_csv(outdir / "paths.csv")

    grid_value = float(bundle.V.at(t0, x0[None, :])[0])
    payload = {"t0": t0, "x0": x0.tolist(), "paths": n_paths, "steps": steps,
               "seed": seed, "grid_value": grid_value}

    if model.one_obstacle:
        out = optimal_stopping_value(
            model, bundle, t0, x0, batch,
            two_obstacle_bundle=extra.get("ceiling_bundle"),
            two_obstacle_model=model, eps_hit=eps_hit,
        )
        est = out["estimate"]
        payload.update(
            {
                "estimate": est.summary(),
                "difference": out["difference"],
                "within_3se": out["within_3se"],
            }
        )
        if "two_obstacle_estimate" in out:
            payload["ceiling_estimate"] = out["two_obstacle_estimate"].summary()
            payload["equivalence_gap"] = out["equivalence_gap"]
            payload["equivalent_within_3se"] = out["equivalent_within_3se"]
        ok = out["within_3se"] and out.get("equivalent_within_3se", True)
    else:
        est = estimate_value(model, bundle, t0, x0,
                             hit_lower(bundle, eps_hit), hit_upper(bundle, eps_hit), batch)
        if doc.get("perturb"):
            perturbs = _parse_perturbations(doc["perturb"], bundle)
        else:
            perturbs = _standard_perturbations(bundle, t0, model.horizon)
        saddle = saddle_check(model, bundle, t0, x0, perturbs, batch, eps_hit=eps_hit)
        sens = hit_sensitivity(model, bundle, t0, x0, batch,
                               eps_hit if eps_hit else bundle.eps_contact)
        # the grid value itself is only trusted to the contact blur, which
        # matters when an immediate stop collapses the MC variance to zero
        within = abs(est.mean - grid_value) <= 3.0 * est.se + bundle.eps_contact
        payload.update(
            {
                "estimate": est.summary(),
                "within_3se": within,
                "saddle": saddle.summary(),
                "sensitivity": {
                    "max_shift": sens["max_shift"],
                    "stable": sens["stable"],
                },
            }
        )
        ok = within and saddle.all_ok
        if figures_on:
            figures.saddle_plot(saddle, outdir / "saddle_margins.png")
    _write_json(outdir / "game.json", payload)
    return ok, payload


def convergence_table(model, fixture, refinements, outdir, figures_on=False,
                      base_grid=None):
    """Refinement study: rows (h, dt, n, sup/l2 error, residual, runtime).

    The reference is the fixture's closed form when available, otherwise
    the finest level's solution interpolated onto each coarser grid.
    """
    if len(refinements) < 2:
        raise ConfigError("need at least two refinement levels")
    base = base_grid or (fixture.default_grid if fixture else None)
    if base is None:
        raise ConfigError("refinement study needs a fixture or an explicit grid")
    rows = []
    bundles = []
    for (nodes, steps, n) in refinements:
        grid = GridSpec(base.extent, (int(nodes),) * base.d_star, int(steps), base.horizon)
        t0 = time.monotonic()
        bundle = solve_penalized(model, grid, float(n))
        runtime = time.monotonic() - t0
        res = complementarity_residual(bundle, model)
        comp = max(res.lower_integral_max, res.upper_integral_max)
        rows.append(
            {
                "nodes": int(nodes), "steps": int(steps), "penalty_n": float(n),
                "h": max(grid.spacing), "dt": grid.dt,
                "comp_residual": comp, "runtime_s": runtime,
            }
        )
        bundles.append(bundle)

    if fixture is not None and fixture.analytic is not None:
        refs = [fixture.analytic.sample(b.grid).V.values for b in bundles]
    else:
        fine = bundles[-1].V
        refs = []
        for b in bundles:
            g = b.grid
            mesh = np.meshgrid(*g.axes(), indexing="ij")
            pts = np.stack([mm.ravel() for mm in mesh], axis=1)
            vals = np.stack([fine.at(t, pts).reshape(g.nodes) for t in g.times])
            refs.append(vals)
    for row, b, ref in zip(rows, bundles, refs):
        diff = b.V.values - ref
        row["sup_error"] = float(np.max(np.abs(diff)))
        row["l2_error"] = Field(b.grid, diff).l2_norm()
    for i in range(1, len(rows)):
        e0, e1 = rows[i - 1]["sup_error"], rows[i]["sup_error"]
        h0, h1 = rows[i - 1]["h"], rows[i]["h"]
        rows[i]["observed_order"] = (
            float(np.log(e0 / e1) / np.log(h0 / h1)) if e0 > 0 and e1 > 0 and h0 != h1 else None
        )

    cols = ["nodes", "steps", "penalty_n", "h", "dt", "sup_error", "l2_error",
            "comp_residual", "observed_order"]
    with open(outdir / "convergence.csv", "w") as fh:
        fh.write(",".join(cols + ["runtime_s"]) + "\n")
        for row in rows:
            vals = [row.get(c) for c in cols]
            txt = [("" if v is None else (_fmt(v) if isinstance(v, float) else str(v)))
                   for v in vals]
            fh.write(",".join(txt + [f"{row['runtime_s']:.3f}"]) + "\n")
    if figures_on:
        figures.convergence_plot(rows, outdir / "convergence.png")
    errs = [r["sup_error"] for r in rows]
    ok = all(b < a for a, b in zip(errs, errs[1:]))
    return ok, rows


# --- pipeline -------------------------------------------------------------------


def run_pipeline(cfg: dict) -> int:
    outdir = Path(cfg.get("out", "out"))
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        model, fixture = resolve_model(cfg["model"])
    except KeyError as exc:
        raise ConfigError(str(exc))
    cfg["_fixture"] = fixture
    figures_on = bool(cfg.get("figures", True))

    stages = cfg.get("stages")
    if stages is None:
        stages = ["validate", "solve", "residual"]
        if cfg.get("boundary") is not None or (fixture and fixture.monotone):
            stages.append("boundary")
        if cfg.get("game") is not None:
            stages.append("game")
        if cfg.get("table") is not None:
            stages.append("table")
    unknown = set(stages) - {"validate", "solve", "residual", "boundary", "game", "table"}
    if unknown:
        raise ConfigError(f"unknown stages: {sorted(unknown)}")

    grid = None
    if "solve" in stages or "table" in stages or cfg.get("grid") is not None or fixture:
        grid = _grid_from_config(cfg.get("grid"), model.horizon, fixture)
    summary = {
        "model": model.name,
        "stages": list(stages),
        "seed": cfg.get("seed", 0),
        "threads": cfg.get("threads", 1),
        "results": {},
        "timings": {},
    }
    if grid is not None:
        summary["grid"] = {"extent": [list(e) for e in grid.extent],
                           "nodes": list(grid.nodes), "steps": grid.steps,
                           "horizon": grid.horizon}

    solved = None
    extra = {}
    all_ok = True
    failed_stage = None
    for stage in stages:
        t0 = time.monotonic()
        try:
            if stage == "validate":
                ok, frag = stage_validate(model, cfg, outdir)
            elif stage == "solve":
                solved, ok, frag = stage_solve(model, grid, cfg, outdir, figures_on)
                if isinstance(solved, SolutionBundle) and (outdir / "bundle_ceiling").exists() \
                        and model.one_obstacle:
                    extra["ceiling_bundle"] = SolutionBundle.load(outdir / "bundle_ceiling")
            elif stage == "residual":
                if not isinstance(solved, SolutionBundle):
                    solved = _require_bundle(cfg, outdir)
                ok, frag = stage_residual(model, solved, outdir)
            elif stage == "boundary":
                if not isinstance(solved, SolutionBundle):
                    solved = _require_bundle(cfg, outdir)
                ok, frag = stage_boundary(model, solved, cfg, outdir, figures_on)
            elif stage == "game":
                if not isinstance(solved, SolutionBundle):
                    solved = _require_bundle(cfg, outdir)
                if model.one_obstacle and "ceiling_bundle" not in extra:
                    for cand in (Path(cfg.get("bundle", outdir / "bundle")).parent
                                 / "bundle_ceiling", outdir / "bundle_ceiling"):
                        if (cand / "bundle.json").exists():
                            extra["ceiling_bundle"] = SolutionBundle.load(cand)
                            break
                ok, frag = stage_game(model, solved, extra, cfg, outdir, figures_on)
            elif stage == "table":
                doc = cfg.get("table") or {}
                refinements = doc.get("refinements")
                if not refinements:
                    raise ConfigError("table stage needs refinements [[N,M,n],...]")
                ok, rows = convergence_table(model, fixture, refinements, outdir,
                                             figures_on, base_grid=grid)
                frag = {"rows": rows}
        except (ConfigError,):
            raise
        except Exception as exc:
            summary["results"][stage] = {"error": str(exc)}
            summary["timings"][stage] = time.monotonic() - t0
            all_ok = False
            failed_stage = stage
            print(f"stage {stage} failed: {exc}", file=sys.stderr)
            break
        summary["timings"][stage] = time.monotonic() - t0
        summary["results"][stage] = frag
        summary["results"][stage + "_passed"] = bool(ok)
        if not ok:
            all_ok = False
            failed_stage = stage
    summary["passed"] = all_ok
    if failed_stage:
        summary["failed_stage"] = failed_stage
    _write_json(outdir / "summary.json", summary)
    return 0 if all_ok else 1


def _require_bundle(cfg, outdir) -> SolutionBundle:
    bdir = cfg.get("bundle") or (outdir / "bundle")
    bdir = Path(bdir)
    if not (bdir / "bundle.json").exists():
        raise ConfigError(f"no solved bundle at {bdir}; run the solve stage first")
    return SolutionBundle.load(bdir)


# --- argument parsing -------------------------------------------------------------


def _common_model_arg(p):
    p.add_argument("--model", required=True,
                   help=f"fixture key or JSON model file; fixtures: {', '.join(fixture_keys())}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynkinlab",
        description="Double-obstacle backward PDE solvers with Dynkin-game verification",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on worker parallelism (solvers are sequential)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="sample the standing assumptions")
    _common_model_arg(p)
    p.add_argument("--box", help="sampling box 'lo,hi[;lo,hi]'")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")

    p = sub.add_parser("solve", help="solve the obstacle problem")
    _common_model_arg(p)
    p.add_argument("--grid", help="'xmin,xmax,N,M' (defaults to the fixture grid)")
    p.add_argument("--penalty", help="comma list of penalty weights")
    p.add_argument("--lattice", type=int, metavar="M_B",
                   help="lattice steps for noise-driven models")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("boundary", help="extract a free boundary from a bundle")
    _common_model_arg(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--side", choices=["lower", "upper"], default="lower")
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--orientation", choices=["sup", "inf"], default="sup")
    p.add_argument("--out", default="out")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("game", help="Monte Carlo game verification of a bundle")
    _common_model_arg(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--x0", default="0")
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", help="'side:kind[:arg];...' deviation strategies")
    p.add_argument("--eps-hit", type=float)
    p.add_argument("--dump-paths", action="store_true")
    p.add_argument("--out", default="out")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("table", help="grid/penalty refinement study")
    _common_model_arg(p)
    p.add_argument("--refine", required=True,
                   help="semicolon list 'N,M,n;N,M,n;...'")
    p.add_argument("--out", default="out")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help="comma list overriding the config stages")
    p.add_argument("--out", help="override the output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "run":
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}")
        if args.stages:
            cfg["stages"] = [s.strip() for s in args.stages.split(",") if s.strip()]
        if args.out:
            cfg["out"] = args.out
        cfg.setdefault("threads", args.threads)
        return run_pipeline(cfg)

    if args.command == "validate":
        cfg = {"model": args.model, "out": args.out, "samples": args.samples,
               "seed": args.seed, "stages": ["validate"]}
        if args.box:
            cfg["box"] = [tuple(float(v) for v in part.split(","))
                          for part in args.box.split(";")]
        return run_pipeline(cfg)

    if args.command == "solve":
        cfg = {"model": args.model, "out": args.out, "seed": args.seed,
               "figures": not args.no_figures, "stages": ["validate", "solve", "residual"]}
        if args.grid:
            cfg["grid"] = args.grid
        if args.penalty:
            cfg["penalty"] = args.penalty
        if args.lattice:
            cfg["lattice"] = {"steps": args.lattice}
            cfg["stages"] = ["validate", "solve"]
        return run_pipeline(cfg)

    if args.command == "boundary":
        cfg = {"model": args.model, "out": args.out, "bundle": args.bundle,
               "figures": not args.no_figures, "stages": ["boundary"],
               "boundary": {"side": args.side, "axis": args.axis,
                            "orientation": args.orientation}}
        return run_pipeline(cfg)

    if args.command == "game":
        x0 = [float(v) for v in str(args.x0).split(",")]
        cfg = {"model": args.model, "out": args.out, "bundle": args.bundle,
               "seed": args.seed, "figures": not args.no_figures, "stages": ["game"],
               "game": {"t0": args.t0, "x0": x0, "paths": args.paths,
                        "steps": args.steps, "seed": args.seed,
                        "dump_paths": args.dump_paths}}
        if args.perturb:
            cfg["game"]["perturb"] = args.perturb
        if args.eps_hit is not None:
            cfg["game"]["eps_hit"] = args.eps_hit
        return run_pipeline(cfg)

    if args.command == "table":
        try:
            refinements = [
                [float(v) for v in part.split(",")] for part in args.refine.split(";")
            ]
        except ValueError:
            raise ConfigError(f"cannot parse refinement list {args.refine!r}")
        cfg = {"model": args.model, "out": args.out,
               "figures": not args.no_figures, "stages": ["table"],
               "table": {"refinements": refinements}}
        return run_pipeline(cfg)

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
