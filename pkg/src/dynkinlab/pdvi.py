"""Backward double-obstacle solvers on deterministic-coefficient problems.

Two independent routes are provided:

* ``solve_penalized`` — implicit Euler in time with the constraint enforced
  through stiff one-sided penalty sources n*(lower-V)^+ - n*(V-upper)^+.
  The nonlinear step is resolved by an active-set (semismooth) iteration:
  the penalty term is piecewise linear, so freezing the active set gives a
  linear solve, and the iteration terminates exactly once the active set
  reproduces itself.  A damped update (factor 1/2) engages only if the
  active set cycles.

* ``solve_projected`` — a projected-relaxation oracle that solves the
  two-sided linear complementarity problem of each time step directly by
  clamping the iterate into the obstacle band.  Reflection densities are
  recovered from the residual of the clamped equation.

Both produce a ``SolutionBundle`` (V, Z, k+, k-) whose complementarity
structure can be audited with ``complementarity_residual``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .grids import Field, GridSpec, apply_generator, apply_noise_coupling
from .model import HjbiCoefficients, ModelSpec, evaluate


@dataclass
class PenaltySchedule:
    """Increasing penalty weights plus inner-iteration controls."""

    n_values: tuple = (10.0, 100.0, 1000.0, 10000.0)
    tol: float = 1e-10
    max_iter: int = 200
    damping: float = 0.5

    def __post_init__(self):
        self.n_values = tuple(float(n) for n in self.n_values)
        if any(n <= 0 for n in self.n_values):
            raise ValueError("penalty weights must be positive")
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("penalty weights must be strictly increasing")


@dataclass
class SolutionBundle:
    """Discrete quadruple (V, Z, k+, k-) with scheme metadata."""

    V: Field
    Z: Field
    k_plus: Field
    k_minus: Field
    metadata: dict = dc_field(default_factory=dict)

    @property
    def grid(self) -> GridSpec:
        return self.V.grid

    @property
    def eps_contact(self) -> float:
        return self.metadata.get("eps_contact", 1e-8)

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.V.to_npz(outdir / "V.npz")
        self.Z.to_npz(outdir / "Z.npz")
        self.k_plus.to_npz(outdir / "k_plus.npz")
        self.k_minus.to_npz(outdir / "k_minus.npz")
        with open(outdir / "bundle.json", "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True, default=float)

    @classmethod
    def load(cls, outdir) -> "SolutionBundle":
        outdir = Path(outdir)
        with open(outdir / "bundle.json") as fh:
            meta = json.load(fh)
        return cls(
            V=Field.from_npz(outdir / "V.npz"),
            Z=Field.from_npz(outdir / "Z.npz"),
            k_plus=Field.from_npz(outdir / "k_plus.npz"),
            k_minus=Field.from_npz(outdir / "k_minus.npz"),
            metadata=meta,
        )


def contact_tolerance(grid: GridSpec, n: float) -> float:
    """Contact blur: penalty smears at O(1/n), discretization at O(h^2)."""
    h = max(grid.spacing)
    return max(10.0 * h * h, 10.0 / n)


# --- sampled problem data ----------------------------------------------------


@dataclass
class SampledProblem:
    """Model data evaluated on all grid slices (for one fixed B value)."""

    grid: GridSpec
    f: np.ndarray        # (M+1, *nodes)
    phi: np.ndarray      # (*nodes,)
    lower: np.ndarray    # (M+1, *nodes), -inf where absent
    upper: np.ndarray    # (M+1, *nodes), +inf where absent
    lower_g: np.ndarray | None = None
    lower_z: np.ndarray | None = None

    def boundary_values(self, m: int) -> np.ndarray:
        """Dirichlet data: terminal cost propagated flat, clamped into the band."""
        return np.clip(self.phi, self.lower[m], self.upper[m])


def sample_problem(model: ModelSpec, grid: GridSpec, b=None, with_obstacle_parts=False) -> SampledProblem:
    mesh = grid.mesh()
    times = grid.times
    shape = (grid.steps + 1,) + grid.nodes

    def sample(fn):
        out = np.empty(shape)
        for m, t in enumerate(times):
            out[m] = np.broadcast_to(np.asarray(evaluate(fn, t, mesh, b)), grid.nodes)
        return out

    f = sample(model.f)
    phi = np.broadcast_to(
        np.asarray(evaluate(model.phi, model.horizon, mesh, b)), grid.nodes
    ).astype(float)
    lower = sample(model.lower.value) if model.lower is not None else np.full(shape, -np.inf)
    upper = sample(model.upper.value) if model.upper is not None else np.full(shape, np.inf)
    lower_g = lower_z = None
    if with_obstacle_parts and model.lower is not None:
        lower_g = sample(model.lower.g)
        lower_z = sample(model.lower.z)
    return SampledProblem(grid, f, phi, lower, upper, lower_g, lower_z)


# --- linear step operators ---------------------------------------------------


class _LinearStep1D:
    """Banded (I - dt*A) with identity boundary rows; A = a D_xx + b D_x + c."""

    def __init__(self, coeffs: HjbiCoefficients, grid: GridSpec, t: float, dt: float, b=None):
        mesh = grid.mesh()
        n = grid.nodes[0]
        h = grid.spacing[0]
        a = _coef(coeffs.a[0][0], t, mesh, b, grid.nodes)
        bb = _coef(coeffs.b[0], t, mesh, b, grid.nodes)
        c = _coef(coeffs.c, t, mesh, b, grid.nodes)
        self.diag = np.ones(n)
        self.sub = np.zeros(n - 1)
        self.sup = np.zeros(n - 1)
        self.diag[1:-1] = 1.0 - dt * (-2.0 * a[1:-1] / h**2 + c[1:-1])
        self.sub[: n - 2] = -dt * (a[1:-1] / h**2 - bb[1:-1] / (2 * h))
        self.sup[1:] = -dt * (a[1:-1] / h**2 + bb[1:-1] / (2 * h))
        self.n = n

    def solve(self, diag_add: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        ab = np.zeros((3, self.n))
        ab[0, 1:] = self.sup
        ab[1] = self.diag + diag_add
        ab[2, :-1] = self.sub
        return solve_banded((1, 1), ab, rhs)

    def apply(self, v: np.ndarray, diag_add: np.ndarray) -> np.ndarray:
        out = (self.diag + diag_add) * v
        out[:-1] += self.sup * v[1:]
        out[1:] += self.sub * v[:-1]
        return out


class _LinearStep2D:
    """Sparse (I - dt*A) on the flattened 2-d grid, 9-point stencil."""

    def __init__(self, coeffs: HjbiCoefficients, grid: GridSpec, t: float, dt: float, b=None):
        mesh = grid.mesh()
        n1, n2 = grid.nodes
        h1, h2 = grid.spacing
        shape = grid.nodes
        a11 = _coef(coeffs.a[0][0], t, mesh, b, shape)
        a12 = _coef(coeffs.a[0][1], t, mesh, b, shape)
        a22 = _coef(coeffs.a[1][1], t, mesh, b, shape)
        b1 = _coef(coeffs.b[0], t, mesh, b, shape)
        b2 = _coef(coeffs.b[1], t, mesh, b, shape)
        c = _coef(coeffs.c, t, mesh, b, shape)

        def flat(i, j):
            return i * n2 + j

        ii, jj = np.meshgrid(np.arange(1, n1 - 1), np.arange(1, n2 - 1), indexing="ij")
        ii = ii.ravel()
        jj = jj.ravel()
        center = flat(ii, jj)
        ai = a11[ii, jj]
        aj = a22[ii, jj]
        ax = a12[ii, jj]
        bi = b1[ii, jj]
        bj = b2[ii, jj]
        cc = c[ii, jj]

        rows, cols, vals = [], [], []

        def add(r, cidx, v):
            rows.append(r)
            cols.append(cidx)
            vals.append(v)

        add(center, center, 1.0 - dt * (-2 * ai / h1**2 - 2 * aj / h2**2 + cc))
        add(center, flat(ii + 1, jj), -dt * (ai / h1**2 + bi / (2 * h1)))
        add(center, flat(ii - 1, jj), -dt * (ai / h1**2 - bi / (2 * h1)))
        add(center, flat(ii, jj + 1), -dt * (aj / h2**2 + bj / (2 * h2)))
        add(center, flat(ii, jj - 1), -dt * (aj / h2**2 - bj / (2 * h2)))
        cross = dt * 2 * ax / (4 * h1 * h2)
        add(center, flat(ii + 1, jj + 1), -cross)
        add(center, flat(ii - 1, jj - 1), -cross)
        add(center, flat(ii + 1, jj - 1), cross)
        add(center, flat(ii - 1, jj + 1), cross)

        bmask = grid.boundary_mask().ravel()
        bidx = np.nonzero(bmask)[0]
        add(bidx, bidx, np.ones(bidx.size))

        rows = np.concatenate([np.asarray(r).ravel() for r in rows])
        cols = np.concatenate([np.asarray(cv).ravel() for cv in cols])
        vals = np.concatenate([np.asarray(v, dtype=float).ravel() for v in vals])
        self.size = n1 * n2
        self.mat = sparse.coo_matrix((vals, (rows, cols)), shape=(self.size, self.size)).tocsc()
        self.base_diag = self.mat.diagonal()

    def solve(self, diag_add: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        mat = self.mat.copy()
        mat.setdiag(self.base_diag + diag_add.ravel())
        try:
            lu = splu(mat.tocsc())
        except RuntimeError as exc:  # pragma: no cover - singular system fault
            raise RuntimeError(f"singular linear system in implicit step: {exc}") from exc
        return lu.solve(rhs.ravel()).reshape(diag_add.shape)

    def apply(self, v: np.ndarray, diag_add: np.ndarray) -> np.ndarray:
        out = self.mat @ v.ravel() + diag_add.ravel() * v.ravel()
        return out.reshape(v.shape)


def _coef(comp, t, mesh, b, shape):
    if callable(comp):
        return np.broadcast_to(np.asarray(comp(t, mesh, b), dtype=float), shape)
    return np.full(shape, float(comp))


def _make_step(coeffs, grid, t, dt, b=None):
    if grid.d_star == 1:
        return _LinearStep1D(coeffs, grid, t, dt, b)
    return _LinearStep2D(coeffs, grid, t, dt, b)


# --- the penalized implicit step ---------------------------------------------


def implicit_penalty_step(
    step,
    grid: GridSpec,
    v_next: np.ndarray,
    source: np.ndarray,
    lo: np.ndarray,
    up: np.ndarray,
    bc: np.ndarray,
    n: float,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 0.5,
    v_init: np.ndarray | None = None,
):
    """One backward step of the penalized equation; returns (v, iterations).

    Solves (I - dt*A) v = v_next + dt*(source + n(lo-v)^+ - n(v-up)^+) with
    Dirichlet boundary data ``bc``.  The active set is iterated to a fixed
    point; since the system is piecewise linear, a reproduced active set
    certifies the exact solution of the nonlinear step.
    """
    bmask = grid.boundary_mask()
    rhs0 = v_next + dt * source
    rhs0[bmask] = bc[bmask]
    v = v_next.copy() if v_init is None else v_init.copy()
    prev_sets = None
    damped = False
    for it in range(1, max_iter + 1):
        alo = (lo - v) > 0
        aup = (v - up) > 0
        alo[bmask] = False
        aup[bmask] = False
        diag_add = dt * n * (alo.astype(float) + aup.astype(float))
        rhs = rhs0 + dt * n * (
            np.where(alo, lo, 0.0) + np.where(aup, up, 0.0)
        )
        rhs[bmask] = bc[bmask]
        v_new = step.solve(diag_add, rhs)
        if not np.all(np.isfinite(v_new)):
            raise RuntimeError("singular linear system in implicit step")

        new_alo = (lo - v_new) > 0
        new_aup = (v_new - up) > 0
        new_alo[bmask] = False
        new_aup[bmask] = False
        consistent = np.array_equal(new_alo, alo) and np.array_equal(new_aup, aup)
        change = float(np.max(np.abs(v_new - v)))
        if consistent:
            return v_new, it
        sets = (alo.tobytes(), aup.tobytes())
        if prev_sets is not None and sets in prev_sets:
            damped = True  # active set cycles; damp the value update
        prev_sets = {sets} if prev_sets is None else prev_sets | {sets}
        if damped:
            v = v + damping * (v_new - v)
        else:
            v = v_new
        if change <= tol:
            return v, it
    worst = np.unravel_index(int(np.argmax(np.abs(v_new - v))), v.shape)
    raise RuntimeError(
        f"penalty inner iteration did not converge (worst node {worst}, "
        f"last change {change:.3e})"
    )


# --- solvers ------------------------------------------------------------------


def solve_penalized(
    model: ModelSpec,
    grid: GridSpec,
    n: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 0.5,
) -> SolutionBundle:
    """Backward implicit-Euler sweep of the penalized problem at weight n."""
    _require_deterministic(model)
    coeffs = model.hjbi()
    prob = sample_problem(model, grid)
    dt = grid.dt
    M = grid.steps

    vals = np.empty((M + 1,) + grid.nodes)
    kp = np.zeros_like(vals)
    km = np.zeros_like(vals)
    vals[M] = prob.phi
    iters = []
    for m in range(M - 1, -1, -1):
        step = _make_step(coeffs, grid, grid.times[m], dt)
        v, it = implicit_penalty_step(
            step,
            grid,
            vals[m + 1],
            prob.f[m],
            prob.lower[m],
            prob.upper[m],
            prob.boundary_values(m),
            n,
            dt,
            tol=tol,
            max_iter=max_iter,
            damping=damping,
        )
        vals[m] = v
        kp[m] = n * np.maximum(prob.lower[m] - v, 0.0)
        km[m] = n * np.maximum(v - prob.upper[m], 0.0)
        iters.append(it)

    meta = {
        "scheme": "penalty",
        "model": model.name,
        "penalty_n": float(n),
        "eps_contact": contact_tolerance(grid, n),
        "max_lower_violation": float(np.max(np.maximum(prob.lower - vals, 0.0))),
        "max_upper_violation": float(np.max(np.maximum(vals - prob.upper, 0.0))),
        "inner_iterations_max": int(max(iters)),
        "inner_iterations_mean": float(np.mean(iters)),
    }
    d2 = max(model.sde.d2, 1)
    return SolutionBundle(
        V=Field(grid, vals),
        Z=Field.zeros(grid, arity=d2),
        k_plus=Field(grid, kp),
        k_minus=Field(grid, km),
        metadata=meta,
    )


def solve_schedule(model: ModelSpec, grid: GridSpec, sched: PenaltySchedule) -> SolutionBundle:
    """Run the penalty solver along an increasing weight schedule.

    Returns the final bundle; the metadata carries the Cauchy diagnostic
    sequence ||V_{n_j} - V_{n_{j+1}}||_2 and per-weight obstacle violations.
    A violation that grows along the schedule is flagged, not fatal.
    """
    bundles = [
        solve_penalized(model, grid, n, tol=sched.tol, max_iter=sched.max_iter,
                        damping=sched.damping)
        for n in sched.n_values
    ]
    cauchy = [
        Field(grid, b2.V.values - b1.V.values).l2_norm()
        for b1, b2 in zip(bundles, bundles[1:])
    ]
    lo_viol = [b.metadata["max_lower_violation"] for b in bundles]
    up_viol = [b.metadata["max_upper_violation"] for b in bundles]
    slack = 10 * sched.tol
    diverging = any(b > a + slack for a, b in zip(lo_viol, lo_viol[1:])) or any(
        b > a + slack for a, b in zip(up_viol, up_viol[1:])
    )
    final = bundles[-1]
    final.metadata.update(
        {
            "schedule": list(sched.n_values),
            "cauchy_l2": cauchy,
            "lower_violations": lo_viol,
            "upper_violations": up_viol,
            "violation_diverging": bool(diverging),
        }
    )
    return final


def solve_projected(
    model: ModelSpec,
    grid: GridSpec,
    tol: float = 1e-11,
    max_sweeps: int = 100_000,
) -> SolutionBundle:
    """Independent oracle: per-step two-sided LCP by projected relaxation.

    Each backward step clamps the relaxation iterate into [lower, upper];
    at convergence the complementarity holds exactly at relaxation
    tolerance and k+/k- are read off the clamped-equation residual, so
    k+ * k- = 0 node by node.
    """
    _require_deterministic(model)
    coeffs = model.hjbi()
    prob = sample_problem(model, grid)
    dt = grid.dt
    M = grid.steps
    bmask = grid.boundary_mask()

    vals = np.empty((M + 1,) + grid.nodes)
    kp = np.zeros_like(vals)
    km = np.zeros_like(vals)
    vals[M] = prob.phi
    for m in range(M - 1, -1, -1):
        step = _make_step(coeffs, grid, grid.times[m], dt)
        rhs = vals[m + 1] + dt * prob.f[m]
        bc = prob.boundary_values(m)
        rhs[bmask] = bc[bmask]
        lo = prob.lower[m]
        up = prob.upper[m]
        v0 = np.clip(vals[m + 1], lo, up)
        v0[bmask] = bc[bmask]
        if grid.d_star == 1:
            v = _psor_1d(step, rhs, lo, up, v0, tol, max_sweeps)
        else:
            v = _projected_jacobi(step, rhs, lo, up, v0, bmask, tol, max_sweeps)
        v[bmask] = bc[bmask]
        resid = (step.apply(v, np.zeros_like(v)) - rhs) / dt
        resid[bmask] = 0.0
        vals[m] = v
        kp[m] = np.maximum(resid, 0.0)
        km[m] = np.maximum(-resid, 0.0)

    meta = {
        "scheme": "projected",
        "model": model.name,
        "eps_contact": contact_tolerance(grid, 1e12),
        "max_lower_violation": float(np.max(np.maximum(prob.lower - vals, 0.0))),
        "max_upper_violation": float(np.max(np.maximum(vals - prob.upper, 0.0))),
    }
    d2 = max(model.sde.d2, 1)
    return SolutionBundle(
        V=Field(grid, vals),
        Z=Field.zeros(grid, arity=d2),
        k_plus=Field(grid, kp),
        k_minus=Field(grid, km),
        metadata=meta,
    )


def _psor_1d(step: _LinearStep1D, rhs, lo, up, v0, tol, max_sweeps):
    """Red-black projected Gauss-Seidel on the tridiagonal step system."""
    v = v0.copy()
    n = v.size
    diag = step.diag
    red = np.arange(1, n - 1, 2)
    black = np.arange(2, n - 1, 2)
    for sweep in range(max_sweeps):
        old = v.copy()
        for idx in (red, black):
            num = rhs[idx] - step.sub[idx - 1] * v[idx - 1] - step.sup[idx] * v[idx + 1]
            v[idx] = np.clip(num / diag[idx], lo[idx], up[idx])
        if np.max(np.abs(v - old)) <= tol:
            return v
    raise RuntimeError(f"projected relaxation stagnated after {max_sweeps} sweeps")


def _projected_jacobi(step: _LinearStep2D, rhs, lo, up, v0, bmask, tol, max_sweeps):
    v = v0.copy()
    diag = step.base_diag.reshape(v.shape)
    omega = 0.8
    for sweep in range(max_sweeps):
        off = step.apply(v, np.zeros_like(v)) - diag * v
        cand = (rhs - off) / diag
        new = np.clip((1 - omega) * v + omega * cand, lo, up)
        new[bmask] = v0[bmask]
        change = np.max(np.abs(new - v))
        v = new
        if change <= tol:
            return v
    raise RuntimeError(f"projected relaxation stagnated after {max_sweeps} sweeps")


# --- complementarity audit ----------------------------------------------------


@dataclass
class ResidualReport:
    """Discrete audit of the constrained backward system for one bundle."""

    lower_integral_max: float     # max_x of  sum_t (V-lower) k+ dt
    upper_integral_max: float     # max_x of  sum_t (upper-V) k- dt
    min_k_plus: float
    min_k_minus: float
    max_lower_violation: float
    max_upper_violation: float
    pde_residual_max: float
    terminal_mismatch: float
    lower_integrals: np.ndarray = None
    upper_integrals: np.ndarray = None

    def ok(self, tol: float) -> bool:
        return (
            self.lower_integral_max <= tol
            and self.upper_integral_max <= tol
            and self.min_k_plus >= -tol
            and self.min_k_minus >= -tol
            and self.max_lower_violation <= tol
            and self.max_upper_violation <= tol
            and self.pde_residual_max <= tol
            and self.terminal_mismatch <= tol
        )

    def summary(self) -> dict:
        return {
            "lower_integral_max": self.lower_integral_max,
            "upper_integral_max": self.upper_integral_max,
            "min_k_plus": self.min_k_plus,
            "min_k_minus": self.min_k_minus,
            "max_lower_violation": self.max_lower_violation,
            "max_upper_violation": self.max_upper_violation,
            "pde_residual_max": self.pde_residual_max,
            "terminal_mismatch": self.terminal_mismatch,
        }


def complementarity_residual(bundle: SolutionBundle, model: ModelSpec, b=None) -> ResidualReport:
    """Measure how far a bundle is from the discrete complementarity system.

    Reports the per-node time integrals of (V-lower)k+ and (upper-V)k-, the
    k-sign violations, the obstacle violations, the interior residual of
    the discrete backward equation, and the terminal mismatch.
    """
    grid = bundle.grid
    prob = sample_problem(model, grid, b=b)
    coeffs = model.hjbi()
    dt = grid.dt
    M = grid.steps
    V = bundle.V.values
    kp = bundle.k_plus.values
    km = bundle.k_minus.values

    gap_lo = np.where(np.isfinite(prob.lower), V - prob.lower, 0.0)
    gap_up = np.where(np.isfinite(prob.upper), prob.upper - V, 0.0)
    lower_int = np.sum(gap_lo[:M] * kp[:M], axis=0) * dt
    upper_int = np.sum(gap_up[:M] * km[:M], axis=0) * dt

    interior = (slice(None),) + grid.interior()
    pde_max = 0.0
    zvals = bundle.Z.values
    for m in range(M):
        t = grid.times[m]
        gen = apply_generator(coeffs, V[m], t, grid)
        coup = (
            apply_noise_coupling(coeffs, zvals[m], t, grid, b=b)
            if model.sde.d2 > 0
            else 0.0
        )
        r = (V[m + 1] - V[m]) / dt + gen + coup + prob.f[m] + kp[m] - km[m]
        pde_max = max(pde_max, float(np.max(np.abs(r[grid.interior()]))))

    return ResidualReport(
        lower_integral_max=float(np.max(np.abs(lower_int))),
        upper_integral_max=float(np.max(np.abs(upper_int))),
        min_k_plus=float(np.min(kp)),
        min_k_minus=float(np.min(km)),
        max_lower_violation=float(np.max(np.maximum(prob.lower - V, 0.0))),
        max_upper_violation=float(np.max(np.maximum(V - prob.upper, 0.0))),
        pde_residual_max=pde_max,
        terminal_mismatch=float(np.max(np.abs(V[M] - prob.phi))),
        lower_integrals=lower_int,
        upper_integrals=upper_int,
    )


# --- one-obstacle problem ------------------------------------------------------


@dataclass
class OneObstacleSolution:
    direct: SolutionBundle            # one-sided penalty (lower reflection only)
    via_upper: SolutionBundle         # two-obstacle solve under the built ceiling
    auxiliary: Field                  # solution of the unconstrained majorant PDE
    artificial_upper: Field
    sup_difference: float
    via_upper_max_k_minus: float


def solve_one_obstacle(
    model: ModelSpec,
    grid: GridSpec,
    n: float = 1e4,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> OneObstacleSolution:
    """Solve the lower-obstacle problem by two routes and cross-check them.

    Route (a) runs the penalty scheme with only the lower reflection term.
    Route (b) builds an artificial ceiling: solve the unconstrained
    backward equation driven by max{f, 0, g - generator(lower) - coupling(z)}
    with terminal value phi^+, add the strictly positive margin
    (1+|x|^(d*+1))^(-1), and hand the result to the two-obstacle solver.
    The ceiling never binds, so route (b) must report k- ~ 0.
    """
    if not model.one_obstacle:
        raise ValueError("model has an upper obstacle; use solve_penalized")
    _require_deterministic(model)
    coeffs = model.hjbi()
    prob = sample_problem(model, grid, with_obstacle_parts=True)
    dt = grid.dt
    M = grid.steps

    direct = solve_penalized(model, grid, n, tol=tol, max_iter=max_iter)

    # majorant source: max{f, 0, g - L(lower) - M(z)}
    obstacle_drive = np.zeros_like(prob.f)
    for m in range(M + 1):
        gen = apply_generator(coeffs, prob.lower[m], grid.times[m], grid)
        coup = 0.0
        if model.sde.d2 > 0 and prob.lower_z is not None:
            coup = apply_noise_coupling(coeffs, prob.lower_z[m], grid.times[m], grid)
        obstacle_drive[m] = prob.lower_g[m] - gen - coup
    f_hat = np.maximum(np.maximum(prob.f, 0.0), obstacle_drive)

    aux = np.empty((M + 1,) + grid.nodes)
    aux[M] = np.maximum(prob.phi, 0.0)
    bmask = grid.boundary_mask()
    no_lo = np.full(grid.nodes, -np.inf)
    no_up = np.full(grid.nodes, np.inf)
    for m in range(M - 1, -1, -1):
        step = _make_step(coeffs, grid, grid.times[m], dt)
        bc = aux[M]  # flat propagation of the terminal majorant
        v, _ = implicit_penalty_step(
            step, grid, aux[m + 1], f_hat[m], no_lo, no_up, bc, n, dt,
            tol=tol, max_iter=max_iter,
        )
        aux[m] = v

    mesh = grid.mesh()
    r2 = sum(np.broadcast_to(xi, grid.nodes) ** 2 for xi in mesh)
    margin = 1.0 / (1.0 + np.sqrt(r2) ** (grid.d_star + 1))
    ceiling = aux + margin[None]

    upper_env = _ArraysObstacle(grid, ceiling)
    two_sided = ModelSpec(
        sde=model.sde,
        f=model.f,
        phi=model.phi,
        lower=model.lower,
        upper=upper_env.as_process(),
        horizon=model.horizon,
        name=model.name + "+ceiling",
    )
    via_upper = solve_penalized(two_sided, grid, n, tol=tol, max_iter=max_iter)

    sup_diff = float(np.max(np.abs(direct.V.values - via_upper.V.values)))
    max_km = float(np.max(via_upper.k_minus.values))
    via_upper.metadata["artificial_upper"] = True
    return OneObstacleSolution(
        direct=direct,
        via_upper=via_upper,
        auxiliary=Field(grid, aux),
        artificial_upper=Field(grid, ceiling),
        sup_difference=sup_diff,
        via_upper_max_k_minus=max_km,
    )


class _ArraysObstacle:
    """Adapter: a grid-sampled array used as an obstacle value field."""

    def __init__(self, grid: GridSpec, values: np.ndarray):
        self.field = Field(grid, values)

    def as_process(self):
        from .model import ObstacleProcess

        fld = self.field
        grid = fld.grid

        def value(t, x, b):
            shape = np.broadcast_shapes(*[np.shape(v) for v in x])
            pts = np.stack(
                [np.broadcast_to(np.asarray(xi, dtype=float), shape).ravel() for xi in x],
                axis=1,
            )
            out = fld.at(min(max(t, 0.0), grid.horizon), pts)
            return out.reshape(shape)

        return ObstacleProcess(value=value, g=0.0, z=0.0)


def _require_deterministic(model: ModelSpec) -> None:
    if model.sde.b_dependence != "none":
        raise ValueError(
            "deterministic solver requires b_dependence='none'; "
            "use the lattice solver for B-dependent coefficients"
        )
