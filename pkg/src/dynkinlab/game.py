"""Dynkin-game payoffs, hitting strategies, and Monte Carlo verification.

The payoff of a strategy pair (tau1, tau2) is the running cost up to the
earlier stop plus exactly one settlement term: the lower obstacle if
player 1 stops first before T, the upper obstacle if player 2 stops no
later than player 1 and before T, and the terminal cost if nobody stops
early.  Hitting strategies stop when the interpolated value surface
touches an obstacle within a contact tolerance, mirroring the equilibrium
rules built from a solved bundle.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .blattice import BLattice
from .model import ModelSpec, evaluate
from .pdvi import SolutionBundle
from .simulate import PathBatch

STRATEGY_KINDS = ("hit-lower", "hit-upper", "fixed-time", "never", "random", "custom")


@dataclass
class StoppingStrategy:
    kind: str
    eps_hit: float | None = None
    ref: object = None            # SolutionBundle or BLattice for hit rules
    time: float | None = None     # fixed-time stop
    seed: int | None = None       # randomized stop
    fn: object = None             # custom: fn(batch) -> integer steps
    label: str = ""

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind.startswith("hit") and self.ref is None:
            raise ValueError("hitting strategies need a solved reference")
        if not self.label:
            self.label = self.kind if self.time is None else f"{self.kind}@{self.time:g}"


def hit_lower(ref, eps_hit=None) -> StoppingStrategy:
    return StoppingStrategy("hit-lower", eps_hit=eps_hit, ref=ref)


def hit_upper(ref, eps_hit=None) -> StoppingStrategy:
    return StoppingStrategy("hit-upper", eps_hit=eps_hit, ref=ref)


def fixed_time(t: float) -> StoppingStrategy:
    return StoppingStrategy("fixed-time", time=float(t))


def never() -> StoppingStrategy:
    return StoppingStrategy("never")


def random_stop(seed: int) -> StoppingStrategy:
    return StoppingStrategy("random", seed=int(seed), label=f"random#{seed}")


@dataclass
class GameEstimate:
    mean: float
    se: float
    n_paths: int
    strategy1: str
    strategy2: str
    breakdown: dict
    exit_count: int = 0
    warnings: list = dc_field(default_factory=list)

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "se": self.se,
            "n_paths": self.n_paths,
            "strategy1": self.strategy1,
            "strategy2": self.strategy2,
            "breakdown": self.breakdown,
            "exit_count": self.exit_count,
            "warnings": list(self.warnings),
        }


class GameEvaluator:
    """Shared per-batch machinery: running-cost integrals, exits, settlements."""

    def __init__(self, model: ModelSpec, batch: PathBatch, bundle=None):
        self.model = model
        self.batch = batch
        self.bundle = bundle
        n, S = batch.n_paths, batch.steps
        self.n, self.S = n, S

        fvals = np.empty((n, S + 1))
        for s in range(S + 1):
            fvals[:, s] = self._field(model.f, s)
        dt = batch.dt
        self.F = np.zeros((n, S + 1))
        np.cumsum(0.5 * dt * (fvals[:, :-1] + fvals[:, 1:]), axis=1, out=self.F[:, 1:])

        grid = bundle.grid if bundle is not None else None
        self.exit_step = np.full(n, S + 1, dtype=int)
        if grid is not None:
            for s in range(S + 1):
                inside = grid.contains(batch.X[:, s])
                newly = (~inside) & (self.exit_step > s)
                self.exit_step[newly] = s

    def _b(self, s):
        return self.batch.B[:, s, 0] if self.batch.B.shape[2] > 0 else None

    def _field(self, fn, s, idx=None):
        X = self.batch.X
        if idx is None:
            xs = tuple(X[:, s, i] for i in range(X.shape[2]))
            b = self._b(s)
            size = self.n
        else:
            xs = tuple(X[idx, s, i] for i in range(X.shape[2]))
            b = self._b(s)
            b = b[idx] if b is not None else None
            size = len(idx)
        out = np.asarray(evaluate(fn, self.batch.times[s], xs, b), dtype=float)
        return np.broadcast_to(out, (size,))

    def value_at(self, s, idx):
        """Interpolated bundle value at step s for the given paths."""
        pts = self.batch.X[idx, s, :]
        t = self.batch.times[s]
        if isinstance(self.bundle, BLattice):
            b = self._b(s)
            return self.bundle.at(t, pts, b[idx] if b is not None else 0.0)
        return self.bundle.V.at(min(t, self.bundle.grid.horizon), pts)

    # --- strategies ---------------------------------------------------------

    def stopping_steps(self, strategy: StoppingStrategy) -> np.ndarray:
        S = self.S
        if strategy.kind == "never":
            return np.full(self.n, S, dtype=int)
        if strategy.kind == "fixed-time":
            s = int(round((strategy.time - self.batch.t0) / self.batch.dt))
            return np.full(self.n, np.clip(s, 0, S), dtype=int)
        if strategy.kind == "random":
            rng = np.random.Generator(np.random.Philox(key=strategy.seed))
            return rng.integers(0, S + 1, size=self.n)
        if strategy.kind == "custom":
            steps = np.asarray(strategy.fn(self.batch), dtype=int)
            if steps.shape != (self.n,) or steps.min() < 0 or steps.max() > S:
                raise ValueError("custom strategy produced invalid steps")
            return steps
        return self._hit_steps(strategy)

    def _hit_steps(self, strategy: StoppingStrategy) -> np.ndarray:
        side = "lower" if strategy.kind == "hit-lower" else "upper"
        obstacle = getattr(self.model, side)
        if obstacle is None:
            return np.full(self.n, self.S, dtype=int)
        ref = strategy.ref
        eps = strategy.eps_hit
        if eps is None:
            eps = ref.metadata.get("eps_contact", 1e-6) if hasattr(ref, "metadata") else 1e-6
        steps = np.full(self.n, self.S, dtype=int)
        alive = np.ones(self.n, dtype=bool)
        saved_bundle = self.bundle
        self.bundle = ref
        try:
            for s in range(self.S + 1):
                idx = np.nonzero(alive & (self.exit_step > s))[0]
                if idx.size == 0:
                    continue
                v = self.value_at(s, idx)
                obs = self._field(obstacle.value, s, idx)
                gap = (v - obs) if side == "lower" else (obs - v)
                hit = gap <= eps
                steps[idx[hit]] = s
                alive[idx[hit]] = False
        finally:
            self.bundle = saved_bundle
        return steps

    # --- payoffs --------------------------------------------------------------

    def payoffs(self, tau1: np.ndarray, tau2: np.ndarray):
        """Vector of realized payoffs plus the settlement breakdown masks."""
        S, n = self.S, self.n
        tau1 = np.asarray(tau1, dtype=int)
        tau2 = np.asarray(tau2, dtype=int)
        tmin = np.minimum(tau1, tau2)
        use_exit = self.exit_step < tmin
        eff = np.where(use_exit, np.minimum(self.exit_step, S), tmin)
        running = self.F[np.arange(n), eff]

        lower_mask = (~use_exit) & (tau1 < tau2) & (tau1 < S)
        upper_mask = (~use_exit) & (tau2 <= tau1) & (tau2 < S)
        term_mask = (~use_exit) & (tmin >= S)

        settle = np.zeros(n)
        if lower_mask.any():
            idx = np.nonzero(lower_mask)[0]
            settle[idx] = self._settle(self.model.lower.value, tau1, idx)
        if upper_mask.any():
            idx = np.nonzero(upper_mask)[0]
            settle[idx] = self._settle(self.model.upper.value, tau2, idx)
        if term_mask.any():
            idx = np.nonzero(term_mask)[0]
            settle[idx] = self._settle(self.model.phi, np.full(n, S), idx)
        if use_exit.any():
            idx = np.nonzero(use_exit)[0]
            settle[idx], side = self._exit_values(idx)
            lower_mask = lower_mask.copy()
            upper_mask = upper_mask.copy()
            lower_mask[idx[side == 0]] = True
            upper_mask[idx[side == 1]] = True

        payoff = running + settle
        masks = {"lower": lower_mask, "upper": upper_mask, "terminal": term_mask}
        return payoff, running, settle, masks, use_exit

    def _settle(self, fn, steps, idx):
        out = np.empty(idx.size)
        for s in np.unique(steps[idx]):
            sel = idx[steps[idx] == s]
            pos = np.searchsorted(idx, sel)
            out[pos] = self._field(fn, int(s), sel)
        return out

    def _exit_values(self, idx):
        """Nearest-obstacle settlement at the (clamped) exit point."""
        grid = self.bundle.grid if self.bundle is not None else None
        steps = np.minimum(self.exit_step[idx], self.S)
        vals = np.empty(idx.size)
        side = np.zeros(idx.size, dtype=int)
        for j, (p, s) in enumerate(zip(idx, steps)):
            t = self.batch.times[s]
            x = self.batch.X[p, s].copy()
            if grid is not None:
                for ax, (lo, hi) in enumerate(grid.extent):
                    x[ax] = np.clip(x[ax], lo, hi)
            b = self._b(s)
            bp = b[p] if b is not None else None
            xt = tuple(np.asarray(v) for v in x)
            lo_v = (
                float(evaluate(self.model.lower.value, t, xt, bp))
                if self.model.lower is not None
                else -np.inf
            )
            up_v = (
                float(evaluate(self.model.upper.value, t, xt, bp))
                if self.model.upper is not None
                else np.inf
            )
            if not np.isfinite(up_v):
                vals[j], side[j] = lo_v, 0
                continue
            if not np.isfinite(lo_v):
                vals[j], side[j] = up_v, 1
                continue
            if grid is not None:
                if isinstance(self.bundle, BLattice):
                    vb = float(self.bundle.at(t, x[None, :], bp if bp is not None else 0.0)[0])
                else:
                    vb = float(self.bundle.V.at(min(t, grid.horizon), x[None, :])[0])
            else:
                vb = lo_v
            if abs(vb - lo_v) <= abs(up_v - vb):
                vals[j], side[j] = lo_v, 0
            else:
                vals[j], side[j] = up_v, 1
        return vals, side


def payoff(model: ModelSpec, batch: PathBatch, path: int, tau1: int, tau2: int) -> float:
    """Realized payoff of one path under explicit stopping steps."""
    sub = PathBatch(
        t0=batch.t0,
        times=batch.times,
        X=batch.X[path : path + 1],
        B=batch.B[path : path + 1],
        seed=batch.seed,
    )
    ev = GameEvaluator(model, sub, bundle=None)
    values, *_ = ev.payoffs(np.array([tau1]), np.array([tau2]))
    return float(values[0])


def estimate_value(
    model: ModelSpec,
    bundle,
    t0: float,
    x0,
    s1: StoppingStrategy,
    s2: StoppingStrategy,
    batch: PathBatch,
) -> GameEstimate:
    """Monte Carlo estimate of the game payoff under a strategy pair."""
    _check_batch(batch, t0, x0)
    ev = GameEvaluator(model, batch, bundle=bundle)
    tau1 = ev.stopping_steps(s1)
    tau2 = ev.stopping_steps(s2)
    values, running, settle, masks, exited = ev.payoffs(tau1, tau2)
    return _estimate_from(values, running, settle, masks, exited, s1, s2)


def _estimate_from(values, running, settle, masks, exited, s1, s2) -> GameEstimate:
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    breakdown = {
        "running": float(np.sum(running) / n),
        "lower_stop": float(np.sum(settle[masks["lower"]]) / n),
        "upper_stop": float(np.sum(settle[masks["upper"]]) / n),
        "terminal": float(np.sum(settle[masks["terminal"]]) / n),
    }
    exit_count = int(np.sum(exited))
    warnings = []
    if exit_count > 0.01 * n:
        warnings.append(f"{exit_count} of {n} paths exited the grid")
    return GameEstimate(
        mean=mean,
        se=se,
        n_paths=n,
        strategy1=s1.label,
        strategy2=s2.label,
        breakdown=breakdown,
        exit_count=exit_count,
        warnings=warnings,
    )


@dataclass
class SaddleEntry:
    side: str          # which player deviated
    label: str
    margin: float      # >= 0 in equilibrium, up to MC noise
    se: float
    ok: bool


@dataclass
class SaddleReport:
    base: GameEstimate
    entries: list

    @property
    def all_ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def summary(self) -> dict:
        return {
            "base": self.base.summary(),
            "entries": [
                {"side": e.side, "label": e.label, "margin": e.margin,
                 "se": e.se, "ok": e.ok}
                for e in self.entries
            ],
            "all_ok": self.all_ok,
        }


def saddle_check(
    model: ModelSpec,
    bundle,
    t0: float,
    x0,
    perturbations,
    batch: PathBatch,
    eps_hit: float | None = None,
) -> SaddleReport:
    """Verify the equilibrium inequalities against unilateral deviations.

    All estimates reuse the same path batch (common random numbers); for a
    deviation of player 2 the margin is E[R(tau1*, tau2)] - E[R*] and for
    player 1 it is E[R*] - E[R(tau1, tau2*)].  Either must exceed -3 joint
    standard errors of the pathwise difference.
    """
    _check_batch(batch, t0, x0)
    ev = GameEvaluator(model, batch, bundle=bundle)
    s1_star = hit_lower(bundle, eps_hit)
    s2_star = hit_upper(bundle, eps_hit)
    tau1 = ev.stopping_steps(s1_star)
    tau2 = ev.stopping_steps(s2_star)
    base_vals, running, settle, masks, exited = ev.payoffs(tau1, tau2)
    base = _estimate_from(base_vals, running, settle, masks, exited, s1_star, s2_star)

    entries = []
    for side, strat in perturbations:
        if side not in ("lower", "upper"):
            raise ValueError("perturbation side must be 'lower' or 'upper'")
        taup = ev.stopping_steps(strat)
        if side == "upper":
            vals, *_ = ev.payoffs(tau1, taup)
            diff = vals - base_vals
        else:
            vals, *_ = ev.payoffs(taup, tau2)
            diff = base_vals - vals
        margin = float(np.mean(diff))
        se = float(np.std(diff, ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
        entries.append(
            SaddleEntry(side=side, label=strat.label, margin=margin, se=se,
                        ok=margin >= -3.0 * se)
        )
    return SaddleReport(base=base, entries=entries)


def optimal_stopping_value(
    model: ModelSpec,
    bundle,
    t0: float,
    x0,
    batch: PathBatch,
    two_obstacle_bundle=None,
    two_obstacle_model=None,
    eps_hit: float | None = None,
) -> dict:
    """Monte Carlo value of the single-stopper problem under the hit rule.

    Compares the estimate with the grid value at (t0, x0); when the
    artificial-ceiling bundle is supplied the stop-versus-never game value
    is estimated as well, which must agree with the one-sided problem.
    """
    if not model.one_obstacle:
        raise ValueError("optimal stopping needs a one-obstacle model")
    _check_batch(batch, t0, x0)
    est = estimate_value(model, bundle, t0, x0, hit_lower(bundle, eps_hit), never(), batch)
    x0a = np.atleast_1d(np.asarray(x0, dtype=float))
    grid_value = float(bundle.V.at(t0, x0a[None, :])[0])
    out = {
        "estimate": est,
        "grid_value": grid_value,
        "difference": est.mean - grid_value,
        "within_3se": abs(est.mean - grid_value) <= 3.0 * est.se,
    }
    if two_obstacle_bundle is not None:
        m2 = two_obstacle_model or model
        est2 = estimate_value(
            m2, two_obstacle_bundle, t0, x0,
            hit_lower(two_obstacle_bundle, eps_hit), never(), batch,
        )
        out["two_obstacle_estimate"] = est2
        joint = float(np.hypot(est.se, est2.se))
        out["equivalence_gap"] = est2.mean - est.mean
        out["equivalent_within_3se"] = abs(est2.mean - est.mean) <= 3.0 * max(joint, 1e-300)
    return out


def hit_sensitivity(
    model: ModelSpec,
    bundle,
    t0: float,
    x0,
    batch: PathBatch,
    eps_hit: float,
) -> dict:
    """Estimate under eps/2, eps, 2*eps hitting tolerances (same paths)."""
    out = {}
    for scale in (0.5, 1.0, 2.0):
        eps = eps_hit * scale
        est = estimate_value(
            model, bundle, t0, x0, hit_lower(bundle, eps), hit_upper(bundle, eps), batch
        )
        out[scale] = est
    moved = max(
        abs(out[0.5].mean - out[1.0].mean), abs(out[2.0].mean - out[1.0].mean)
    )
    out["max_shift"] = moved
    out["stable"] = moved < 2.0 * out[1.0].se
    return out


def _check_batch(batch: PathBatch, t0: float, x0) -> None:
    if abs(batch.t0 - t0) > 1e-12:
        raise ValueError("batch was simulated from a different start time")
    x0a = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.allclose(batch.X[:, 0, :], x0a[None, :]):
        raise ValueError("batch was simulated from a different start point")
