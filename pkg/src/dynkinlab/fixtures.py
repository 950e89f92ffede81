"""Built-in model fixtures, random fixture generators, and JSON ingestion.

The four closed-form double-obstacle fixtures share the 1-d heat operator
(a = 1 via gamma = sqrt(2)) on horizon T = 1:

* ``bump-upper``   — V sits on the upper obstacle (1+x^2)^-1 everywhere,
                     driven there by the source 3(1+x^2)^-3; the upper
                     reflection density equals (1+6x^2)(1+x^2)^-3.
* ``bump-lower``   — V is identically zero on the lower obstacle, with
                     lower reflection density (1+x^2)^-3.
* ``exp-lower``    — V rides the exponential-in-time lower obstacle
                     e^(3-3t)(1+x^2)^-1 with k+ = e^(3-3t)(3x^4+5)(1+x^2)^-3.
* ``exp-upper``    — V rides the upper obstacle e^(3t-3)(1+x^2)^-1 with
                     k- = e^(3t-3)(3x^4+12x^2+1)(1+x^2)^-3.

The exponential pair also exists in an alternate time orientation
(``-alt`` keys) whose terminal datum disagrees with the backward
convention; the residual audit rejects the alternate candidates, which is
why the plain keys carry the orientation that passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .grids import Field, GridSpec
from .model import ModelSpec, ObstacleProcess, SdeCoefficients, evaluate
from .pdvi import SolutionBundle

SQRT2 = float(np.sqrt(2.0))


@dataclass
class AnalyticBundle:
    """Closed-form (V, Z, k+, k-) callables for a fixture."""

    V: object
    k_plus: object = 0.0
    k_minus: object = 0.0
    Z: object = 0.0

    def sample(self, grid: GridSpec, b=None) -> SolutionBundle:
        vals = np.empty((grid.steps + 1,) + grid.nodes)
        kp = np.zeros_like(vals)
        km = np.zeros_like(vals)
        mesh = grid.mesh()
        for m, t in enumerate(grid.times):
            vals[m] = np.broadcast_to(np.asarray(evaluate(self.V, t, mesh, b)), grid.nodes)
            if m < grid.steps:
                kp[m] = np.broadcast_to(
                    np.asarray(evaluate(self.k_plus, t, mesh, b)), grid.nodes)
                km[m] = np.broadcast_to(
                    np.asarray(evaluate(self.k_minus, t, mesh, b)), grid.nodes)
        meta = {"scheme": "analytic", "eps_contact": 1e-9}
        return SolutionBundle(
            V=Field(grid, vals),
            Z=Field.zeros(grid),
            k_plus=Field(grid, kp),
            k_minus=Field(grid, km),
            metadata=meta,
        )


@dataclass
class Fixture:
    key: str
    model: ModelSpec
    default_grid: GridSpec
    analytic: AnalyticBundle | None = None
    monotone: dict | None = None
    game: dict = dc_field(default_factory=dict)
    tags: tuple = ()
    notes: str = ""


def _heat_sde(d2: int = 0, b_dependence: str = "none") -> SdeCoefficients:
    return SdeCoefficients(
        d_star=1, d1=1, d2=d2, beta=0.0, gamma=SQRT2, theta=0.0,
        b_dependence=b_dependence,
    )


def _w(x):
    return 1.0 / (1.0 + x[0] ** 2)


def _grid1d(nodes=401, steps=400, lo=-8.0, hi=8.0, T=1.0) -> GridSpec:
    return GridSpec(extent=((lo, hi),), nodes=(nodes,), steps=steps, horizon=T)


# --- closed-form double-obstacle fixtures -----------------------------------


def _bump_upper() -> Fixture:
    model = ModelSpec(
        sde=_heat_sde(),
        f=lambda t, x, b: 3.0 * _w(x) ** 3,
        phi=lambda t, x, b: _w(x),
        lower=ObstacleProcess(0.0),
        upper=ObstacleProcess(lambda t, x, b: _w(x)),
        horizon=1.0,
        name="bump-upper",
    )
    analytic = AnalyticBundle(
        V=lambda t, x, b: _w(x),
        k_plus=0.0,
        k_minus=lambda t, x, b: (1.0 + 6.0 * x[0] ** 2) * _w(x) ** 3,
    )
    return Fixture("bump-upper", model, _grid1d(), analytic,
                   game={"t0": 0.0, "x0": 0.0})


def _bump_lower() -> Fixture:
    model = ModelSpec(
        sde=_heat_sde(),
        f=lambda t, x, b: -(_w(x) ** 3),
        phi=0.0,
        lower=ObstacleProcess(0.0),
        upper=ObstacleProcess(lambda t, x, b: _w(x)),
        horizon=1.0,
        name="bump-lower",
    )
    analytic = AnalyticBundle(
        V=0.0,
        k_plus=lambda t, x, b: _w(x) ** 3,
        k_minus=0.0,
    )
    return Fixture("bump-lower", model, _grid1d(), analytic)


def _exp_lower(alt: bool = False) -> Fixture:
    lower = ObstacleProcess(
        value=lambda t, x, b: np.exp(3.0 - 3.0 * t) * _w(x),
        g=lambda t, x, b: 3.0 * np.exp(3.0 - 3.0 * t) * _w(x),
    )
    upper = ObstacleProcess(lambda t, x, b: np.exp(4.0) * _w(x))
    phi = (lambda t, x, b: np.exp(3.0) * _w(x)) if alt else (lambda t, x, b: _w(x))
    model = ModelSpec(
        sde=_heat_sde(), f=0.0, phi=phi, lower=lower, upper=upper,
        horizon=1.0, name="exp-lower-alt" if alt else "exp-lower",
    )
    analytic = AnalyticBundle(
        V=lambda t, x, b: np.exp(3.0 - 3.0 * t) * _w(x),
        k_plus=lambda t, x, b: np.exp(3.0 - 3.0 * t) * (3.0 * x[0] ** 4 + 5.0) * _w(x) ** 3,
        k_minus=0.0,
    )
    notes = "alternate time orientation; candidate bundle fails the terminal check" if alt else ""
    return Fixture(model.name, model, _grid1d(), analytic,
                   tags=("alt-orientation",) if alt else (), notes=notes)


def _exp_upper(alt: bool = False) -> Fixture:
    upper = ObstacleProcess(
        value=lambda t, x, b: np.exp(3.0 * t - 3.0) * _w(x),
        g=lambda t, x, b: -3.0 * np.exp(3.0 * t - 3.0) * _w(x),
    )
    phi = (lambda t, x, b: np.exp(-3.0) * _w(x)) if alt else (lambda t, x, b: _w(x))
    model = ModelSpec(
        sde=_heat_sde(), f=0.0, phi=phi, lower=ObstacleProcess(0.0), upper=upper,
        horizon=1.0, name="exp-upper-alt" if alt else "exp-upper",
    )
    analytic = AnalyticBundle(
        V=lambda t, x, b: np.exp(3.0 * t - 3.0) * _w(x),
        k_plus=0.0,
        k_minus=lambda t, x, b: np.exp(3.0 * t - 3.0)
        * (3.0 * x[0] ** 4 + 12.0 * x[0] ** 2 + 1.0) * _w(x) ** 3,
    )
    notes = "alternate time orientation; candidate bundle fails the terminal check" if alt else ""
    return Fixture(model.name, model, _grid1d(), analytic,
                   tags=("alt-orientation",) if alt else (), notes=notes)


# --- derived fixtures ---------------------------------------------------------


def _gauss_free() -> Fixture:
    model = ModelSpec(
        sde=_heat_sde(),
        f=0.0,
        phi=lambda t, x, b: np.exp(-0.5 * x[0] ** 2),
        lower=ObstacleProcess(-1e6),
        upper=ObstacleProcess(1e6),
        horizon=1.0,
        name="gauss-free",
    )

    def heat_value(t, x, b):
        var = 1.0 + 2.0 * (1.0 - t)
        return np.exp(-0.5 * x[0] ** 2 / var) / np.sqrt(var)

    analytic = AnalyticBundle(V=heat_value)
    return Fixture("gauss-free", model, _grid1d(nodes=201, steps=100), analytic,
                   game={"t0": 0.0, "x0": 0.0})


def _two_sided_game() -> Fixture:
    def lower_v(t, x, b):
        return 0.9 / (1.0 + (x[0] - 3.0) ** 2)

    def upper_v(t, x, b):
        return 1.2 - 0.9 / (1.0 + (x[0] + 3.0) ** 2)

    def phi(t, x, b):
        return np.clip(0.5 * np.exp(-0.25 * x[0] ** 2), lower_v(t, x, b), upper_v(t, x, b))

    model = ModelSpec(
        sde=_heat_sde(),
        f=0.0,
        phi=phi,
        lower=ObstacleProcess(lower_v),
        upper=ObstacleProcess(upper_v),
        horizon=1.0,
        name="two-sided-game",
    )
    return Fixture(
        "two-sided-game", model, _grid1d(nodes=401, steps=400),
        game={"t0": 0.0, "x0": 0.0, "paths": 100_000, "seed": 20240, "steps": 400,
              "fine_nodes": 1601, "fine_steps": 1600},
    )


def _one_sided_stop() -> Fixture:
    model = ModelSpec(
        sde=_heat_sde(),
        f=0.0,
        phi=lambda t, x, b: _w(x),
        lower=ObstacleProcess(lambda t, x, b: _w(x)),
        upper=None,
        horizon=1.0,
        name="one-sided-stop",
    )
    return Fixture(
        "one-sided-stop", model, _grid1d(nodes=401, steps=400),
        game={"t0": 0.0, "x0": 1.5, "paths": 100_000, "seed": 20241, "steps": 400,
              "fine_nodes": 1601, "fine_steps": 1600},
    )


def _expit(y):
    return 1.0 / (1.0 + np.exp(-y))


def _tilt_1d() -> Fixture:
    # Data rise monotonically and go quiet at both truncated edges: the
    # drain acts only where the terminal cost sits on the obstacle, so the
    # flat-terminal boundary pin is exact up to exponential tails.
    model = ModelSpec(
        sde=_heat_sde(),
        f=lambda t, x, b: -0.8 * (1.0 - _expit(2.0 * x[0])),
        phi=lambda t, x, b: 0.6 * _expit(2.0 * x[0]),
        lower=ObstacleProcess(0.0),
        upper=ObstacleProcess(2.0),
        horizon=1.0,
        name="tilt-1d",
    )
    return Fixture(
        "tilt-1d", model, _grid1d(nodes=321, steps=160),
        monotone={"axis": 0, "direction": "increasing", "side": "lower",
                  "orientation": "sup"},
    )


def _tilt_2d() -> Fixture:
    sde = SdeCoefficients(d_star=2, d1=2, d2=0, beta=0.0, gamma=SQRT2, theta=0.0)
    model = ModelSpec(
        sde=sde,
        f=lambda t, x, b: -0.8 * (1.0 - _expit(2.0 * x[0])) * (1.0 - _expit(2.0 * x[1])),
        phi=lambda t, x, b: 0.6 * _expit(2.0 * x[0]) * _expit(2.0 * x[1]),
        lower=ObstacleProcess(0.0),
        upper=ObstacleProcess(3.0),
        horizon=1.0,
        name="tilt-2d",
    )
    grid = GridSpec(extent=((-4.0, 4.0), (-4.0, 4.0)), nodes=(81, 81), steps=40,
                    horizon=1.0)
    return Fixture(
        "tilt-2d", model, grid,
        monotone={"axis": 0, "direction": "increasing", "side": "lower",
                  "orientation": "sup", "cross_axis": 1},
    )


# --- noise-driven fixtures for the lattice ------------------------------------


def _noise_rate() -> Fixture:
    model = ModelSpec(
        sde=_heat_sde(d2=1, b_dependence="markov-in-b"),
        f=lambda t, x, b: (b if b is not None else 0.0) ** 2 + 0.0 * x[0],
        phi=0.0,
        lower=ObstacleProcess(-1e6),
        upper=ObstacleProcess(1e6),
        horizon=1.0,
        name="noise-rate",
    )
    return Fixture("noise-rate", model, _grid1d(nodes=41, steps=64),
                   notes="value is the accumulated squared noise, x-independent")


def _noise_martingale() -> Fixture:
    model = ModelSpec(
        sde=_heat_sde(d2=1, b_dependence="markov-in-b"),
        f=0.0,
        phi=lambda t, x, b: (b if b is not None else 0.0) + 0.0 * x[0],
        lower=ObstacleProcess(-1e6),
        upper=ObstacleProcess(1e6),
        horizon=1.0,
        name="noise-martingale",
    )
    return Fixture("noise-martingale", model, _grid1d(nodes=41, steps=16),
                   notes="terminal pays the noise itself; Z is identically one")


def _bump_upper_noise() -> Fixture:
    base = _bump_upper()
    model = ModelSpec(
        sde=_heat_sde(d2=1, b_dependence="markov-in-b"),
        f=base.model.f,
        phi=base.model.phi,
        lower=base.model.lower,
        upper=base.model.upper,
        horizon=1.0,
        name="bump-upper-noise",
    )
    return Fixture("bump-upper-noise", model, _grid1d(nodes=101, steps=8),
                   analytic=base.analytic,
                   notes="noise-blind data on the lattice; degenerates to bump-upper")


_REGISTRY = {
    "bump-upper": _bump_upper,
    "bump-lower": _bump_lower,
    "exp-lower": _exp_lower,
    "exp-upper": _exp_upper,
    "exp-lower-alt": lambda: _exp_lower(alt=True),
    "exp-upper-alt": lambda: _exp_upper(alt=True),
    "gauss-free": _gauss_free,
    "two-sided-game": _two_sided_game,
    "one-sided-stop": _one_sided_stop,
    "tilt-1d": _tilt_1d,
    "tilt-2d": _tilt_2d,
    "noise-rate": _noise_rate,
    "noise-martingale": _noise_martingale,
    "bump-upper-noise": _bump_upper_noise,
}


def fixture_keys() -> list:
    return sorted(_REGISTRY)


def get_fixture(key: str) -> Fixture:
    try:
        return _REGISTRY[key]()
    except KeyError:
        raise KeyError(f"unknown fixture key {key!r}; known keys: {', '.join(fixture_keys())}")


# --- randomized smooth fixtures ------------------------------------------------


def _bumps(rng, count=3, amp=0.5, width=(0.5, 2.0), centers=(-4.0, 4.0), nonneg=False):
    cs = rng.uniform(0.0 if nonneg else -amp, amp, count)
    mus = rng.uniform(*centers, count)
    sds = rng.uniform(*width, count)

    def fn(t, x, b):
        acc = 0.0
        for c, mu, sd in zip(cs, mus, sds):
            acc = acc + c * np.exp(-0.5 * ((x[0] - mu) / sd) ** 2)
        return acc + 0.0 * x[0]

    return fn


def random_smooth_fixture(seed: int) -> Fixture:
    """A compatible random double-obstacle problem with smooth data."""
    rng = np.random.default_rng(seed)
    lower_fn = _bumps(rng)
    gap_core = _bumps(rng)
    lam_core = _bumps(rng)
    f_fn = _bumps(rng, amp=1.5)

    def expit(y):
        return 1.0 / (1.0 + np.exp(-y))

    def upper_fn(t, x, b):
        return lower_fn(t, x, b) + 0.2 + 0.6 * expit(gap_core(t, x, b))

    def phi_fn(t, x, b):
        lam = expit(lam_core(t, x, b))
        lo = lower_fn(t, x, b)
        return lo + lam * (upper_fn(t, x, b) - lo)

    model = ModelSpec(
        sde=_heat_sde(),
        f=f_fn,
        phi=phi_fn,
        lower=ObstacleProcess(lower_fn),
        upper=ObstacleProcess(upper_fn),
        horizon=1.0,
        name=f"random-smooth-{seed}",
    )
    return Fixture(model.name, model, _grid1d(nodes=161, steps=80))


def ordered_fixture_pair(seed: int):
    """Two fixtures with pointwise-ordered data (first dominates second)."""
    low = random_smooth_fixture(seed)
    rng = np.random.default_rng(seed + 7_777_777)
    g1 = _bumps(rng, amp=0.4, nonneg=True)
    g2 = _bumps(rng, amp=0.4, nonneg=True)
    g3 = _bumps(rng, amp=0.4, nonneg=True)
    g4 = _bumps(rng, amp=0.8, nonneg=True)
    m2 = low.model

    def lift(base, *adds):
        def fn(t, x, b):
            acc = evaluate(base, t, x, b)
            for a in adds:
                acc = acc + a(t, x, b)
            return acc

        return fn

    m1 = ModelSpec(
        sde=m2.sde,
        f=lift(m2.f, g4),
        phi=lift(m2.phi, g1, g2),
        lower=ObstacleProcess(lift(m2.lower.value, g1)),
        upper=ObstacleProcess(lift(m2.upper.value, g1, g2, g3)),
        horizon=m2.horizon,
        name=f"random-ordered-hi-{seed}",
    )
    hi = Fixture(m1.name, m1, low.default_grid)
    return hi, low


# --- JSON ingestion -------------------------------------------------------------

_SAFE_NAMES = {
    "np": np,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "minimum": np.minimum, "maximum": np.maximum, "clip": np.clip,
    "where": np.where, "sign": np.sign,
    "pi": np.pi, "e": np.e, "inf": np.inf,
}


def compile_field(expr):
    """Turn a JSON field spec (number or expression string) into a field."""
    if expr is None:
        return 0.0
    if isinstance(expr, (int, float)):
        return float(expr)
    if not isinstance(expr, str):
        raise ValueError(f"cannot compile field spec {expr!r}")
    code = compile(expr, "<field>", "eval")

    def fn(t, x, b, _code=code):
        env = dict(_SAFE_NAMES)
        env.update({"t": t, "x": x[0], "x1": x[0], "b": 0.0 if b is None else b})
        if len(x) > 1:
            env["x2"] = x[1]
        return eval(_code, {"__builtins__": {}}, env)

    return fn


def _compile_matrix(spec, rows, cols):
    if spec is None:
        return 0.0
    if isinstance(spec, (int, float, str)):
        return compile_field(spec)
    return tuple(tuple(compile_field(c) for c in row) for row in spec)


def _compile_obstacle(spec):
    if spec is None:
        return None
    if isinstance(spec, (int, float, str)):
        return ObstacleProcess(compile_field(spec))
    return ObstacleProcess(
        value=compile_field(spec.get("value")),
        g=compile_field(spec.get("g", 0.0)),
        z=compile_field(spec.get("z", 0.0)),
    )


def load_model(source) -> ModelSpec:
    """Build a ModelSpec from a JSON file path or an already-parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            doc = json.load(fh)
    else:
        doc = dict(source)
    sde_doc = doc.get("sde", {})
    d_star = int(sde_doc.get("d_star", 1))
    d1 = int(sde_doc.get("d1", 1))
    d2 = int(sde_doc.get("d2", 0))
    sde = SdeCoefficients(
        d_star=d_star,
        d1=d1,
        d2=d2,
        beta=_compile_matrix(sde_doc.get("beta", 0.0), d_star, 1),
        gamma=_compile_matrix(sde_doc.get("gamma", 1.0), d_star, d1),
        theta=_compile_matrix(sde_doc.get("theta", 0.0), d_star, d2),
        b_dependence=sde_doc.get("b_dependence", "none"),
    )
    return ModelSpec(
        sde=sde,
        f=compile_field(doc.get("f", 0.0)),
        phi=compile_field(doc.get("phi", 0.0)),
        lower=_compile_obstacle(doc.get("lower")),
        upper=_compile_obstacle(doc.get("upper")),
        horizon=float(doc.get("horizon", 1.0)),
        name=str(doc.get("name", "model")),
    )


def resolve_model(ref) -> tuple:
    """Resolve a CLI model reference: fixture key, JSON path, or dict.

    Returns (model, fixture-or-None).
    """
    if isinstance(ref, str) and ref in _REGISTRY:
        fx = get_fixture(ref)
        return fx.model, fx
    if isinstance(ref, (str, Path)):
        p = Path(ref)
        if p.exists():
            return load_model(p), None
        raise KeyError(
            f"unknown fixture key or missing model file {ref!r}; "
            f"known fixtures: {', '.join(fixture_keys())}"
        )
    return load_model(ref), None
