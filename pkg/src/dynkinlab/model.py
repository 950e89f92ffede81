"""Problem data: SDE coefficients, obstacle processes, assumption checks.

Coefficient and cost fields follow one calling convention throughout the
package: ``fn(t, x, b)`` where ``t`` is a scalar time, ``x`` is a tuple of
coordinate arrays (one per space axis, broadcastable against each other),
and ``b`` is the current value of the auxiliary noise B (``None`` when the
model has no B factor).  Plain numbers are accepted wherever a field is
expected and are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, ndimage

B_DEPENDENCE = ("none", "markov-in-b")


def _rows(spec, n_rows, n_cols):
    """Normalize a (possibly scalar) matrix coefficient to a nested tuple."""
    if n_cols == 0:
        return tuple(() for _ in range(n_rows))
    if np.isscalar(spec) or callable(spec):
        if n_rows == n_cols:
            # scalar shorthand: multiple of the identity
            return tuple(
                tuple(spec if i == j else 0.0 for j in range(n_cols))
                for i in range(n_rows)
            )
        if n_rows == 1 or n_cols == 1:
            return tuple(tuple(spec for _ in range(n_cols)) for _ in range(n_rows))
        raise ValueError("scalar shorthand is ambiguous for a rectangular matrix")
    rows = tuple(tuple(row) for row in spec)
    if len(rows) != n_rows or any(len(r) != n_cols for r in rows):
        raise ValueError(f"coefficient matrix must be {n_rows}x{n_cols}")
    return rows


def _vec(spec, n):
    if np.isscalar(spec) or callable(spec):
        return tuple(spec for _ in range(n))
    out = tuple(spec)
    if len(out) != n:
        raise ValueError(f"coefficient vector must have length {n}")
    return out


def evaluate(comp, t, x, b):
    """Evaluate one coefficient component at (t, x, b)."""
    if callable(comp):
        return np.asarray(comp(t, x, b), dtype=float)
    return np.asarray(float(comp))


@dataclass
class SdeCoefficients:
    """Drift and diffusions of the state equation dX = beta dt + gamma dW + theta dB."""

    d_star: int
    d1: int
    d2: int
    beta: tuple = 0.0
    gamma: tuple = 1.0
    theta: tuple = 0.0
    b_dependence: str = "none"

    def __post_init__(self):
        if self.d_star not in (1, 2):
            raise ValueError("d_star must be 1 or 2")
        if self.d1 < 1:
            raise ValueError("need at least one W factor")
        if self.d2 < 0:
            raise ValueError("d2 must be nonnegative")
        if self.b_dependence not in B_DEPENDENCE:
            raise ValueError(f"b_dependence must be one of {B_DEPENDENCE}")
        self.beta = _vec(self.beta, self.d_star)
        self.gamma = _rows(self.gamma, self.d_star, self.d1)
        self.theta = _rows(self.theta, self.d_star, self.d2)

    def gamma_at(self, t, x, b) -> np.ndarray:
        return _matrix_at(self.gamma, t, x, b)

    def theta_at(self, t, x, b) -> np.ndarray:
        return _matrix_at(self.theta, t, x, b)

    def beta_at(self, t, x, b) -> np.ndarray:
        return np.array([evaluate(c, t, x, b) for c in self.beta], dtype=float)


def _matrix_at(rows, t, x, b) -> np.ndarray:
    if not rows or not rows[0]:
        return np.zeros((len(rows), 0))
    return np.array(
        [[evaluate(c, t, x, b) for c in row] for row in rows], dtype=float
    )


@dataclass
class HjbiCoefficients:
    """Coefficients (a, b, c, sigma, mu) of the constrained backward equation."""

    d_star: int
    d2: int
    a: tuple
    b: tuple
    c: object = 0.0
    sigma: tuple = 0.0
    mu: tuple = 0.0

    def __post_init__(self):
        self.a = _rows(self.a, self.d_star, self.d_star)
        self.b = _vec(self.b, self.d_star)
        self.sigma = _rows(self.sigma, self.d_star, self.d2)
        self.mu = _vec(self.mu, self.d2)

    def a_at(self, t, x, b) -> np.ndarray:
        return _matrix_at(self.a, t, x, b)

    def sigma_at(self, t, x, b) -> np.ndarray:
        return _matrix_at(self.sigma, t, x, b)


def build_hjbi(sde: SdeCoefficients) -> HjbiCoefficients:
    """Identify the backward-equation coefficients from the SDE data.

    a = (gamma gamma^T + theta theta^T)/2, b = beta, c = 0, sigma = theta,
    mu = 0.  With this identification 2 xi^T a xi - |sigma^T xi|^2 equals
    |gamma^T xi|^2 pointwise, so non-degeneracy of gamma gives
    super-parabolicity directly.
    """

    def a_entry(i, j):
        gi, gj = sde.gamma[i], sde.gamma[j]
        ti, tj = sde.theta[i], sde.theta[j]
        if all(not callable(c) for c in (*gi, *gj, *ti, *tj)):
            val = 0.5 * (
                sum(float(p) * float(q) for p, q in zip(gi, gj))
                + sum(float(p) * float(q) for p, q in zip(ti, tj))
            )
            return val

        def entry(t, x, b, gi=gi, gj=gj, ti=ti, tj=tj):
            acc = 0.0
            for p, q in zip(gi, gj):
                acc = acc + evaluate(p, t, x, b) * evaluate(q, t, x, b)
            for p, q in zip(ti, tj):
                acc = acc + evaluate(p, t, x, b) * evaluate(q, t, x, b)
            return 0.5 * acc

        return entry

    d = sde.d_star
    a = tuple(tuple(a_entry(i, j) for j in range(d)) for i in range(d))
    return HjbiCoefficients(
        d_star=d,
        d2=sde.d2,
        a=a,
        b=sde.beta,
        c=0.0,
        sigma=sde.theta,
        mu=tuple(0.0 for _ in range(sde.d2)),
    )


@dataclass
class ObstacleProcess:
    """An obstacle semimartingale: value, drift part g (the -dt term), dB part z."""

    value: object
    g: object = 0.0
    z: object = 0.0

    def value_at(self, t, x, b):
        return evaluate(self.value, t, x, b)

    def g_at(self, t, x, b):
        return evaluate(self.g, t, x, b)

    def z_at(self, t, x, b):
        return evaluate(self.z, t, x, b)


@dataclass
class ModelSpec:
    """Full problem datum: dynamics, costs, obstacles, horizon."""

    sde: SdeCoefficients
    f: object
    phi: object
    lower: ObstacleProcess | None
    upper: ObstacleProcess | None
    horizon: float
    name: str = "model"

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.lower is None and self.upper is None:
            self.lower = ObstacleProcess(-np.inf)
        if isinstance(self.lower, (int, float)):
            self.lower = ObstacleProcess(float(self.lower))
        if isinstance(self.upper, (int, float)):
            self.upper = ObstacleProcess(float(self.upper))

    @property
    def one_obstacle(self) -> bool:
        return self.upper is None

    def hjbi(self) -> HjbiCoefficients:
        return build_hjbi(self.sde)


# --- assumption checks ------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    estimate: float
    worst_point: tuple | None = None
    note: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list:
        out = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            msg = f"{c.name:22s} {status}  estimate={c.estimate:.6g}"
            if c.worst_point is not None:
                msg += f"  worst={tuple(round(float(v), 4) for v in c.worst_point)}"
            if c.note:
                msg += f"  ({c.note})"
            out.append(msg)
        return out


def validate_model(
    m: ModelSpec,
    box,
    n_samples: int = 10_000,
    seed: int = 0,
    b_range: float | None = None,
) -> ValidationReport:
    """Sample-based verification of the standing assumptions.

    box is a sequence of per-axis (lo, hi) pairs.  Each assumption becomes
    a report entry with an estimated constant and the worst sample point;
    failures are reported, never raised.  The check is pure: identical
    inputs and seed give identical reports.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != m.sde.d_star:
        raise ValueError("sampling box dimension mismatch")
    for lo, hi in box:
        if not hi > lo:
            raise ValueError("empty sampling box")

    rng = np.random.default_rng(seed)
    n = int(n_samples)
    ts = rng.uniform(0.0, m.horizon, n)
    xs = np.column_stack([rng.uniform(lo, hi, n) for lo, hi in box])
    if m.sde.d2 > 0:
        if b_range is None:
            b_range = 3.0 * float(np.sqrt(m.horizon))
        bs = rng.uniform(-b_range, b_range, n)
    else:
        bs = np.full(n, np.nan)

    hj = build_hjbi(m.sde)
    report = ValidationReport()

    def point(i):
        p = (ts[i], *xs[i])
        return p if m.sde.d2 == 0 else p + (bs[i],)

    def b_of(i):
        return None if m.sde.d2 == 0 else bs[i]

    # D1: boundedness of beta, gamma, theta (Frobenius norms)
    mags = np.empty(n)
    for i in range(n):
        xt = tuple(np.asarray(v) for v in xs[i])
        mags[i] = (
            np.linalg.norm(m.sde.beta_at(ts[i], xt, b_of(i)))
            + np.linalg.norm(m.sde.gamma_at(ts[i], xt, b_of(i)))
            + np.linalg.norm(m.sde.theta_at(ts[i], xt, b_of(i)))
        )
    i_w = int(np.argmax(mags))
    report.checks.append(
        CheckResult("D1 boundedness", bool(np.all(np.isfinite(mags))),
                    float(mags[i_w]), point(i_w), "estimated K")
    )

    # D2: Lipschitz in x (paired samples) and non-degeneracy of gamma gamma^T
    perm = rng.permutation(n)
    ratios = np.zeros(n)
    for i in range(n):
        j = perm[i]
        dx = np.linalg.norm(xs[i] - xs[j])
        if dx < 1e-9:
            continue
        xi = tuple(np.asarray(v) for v in xs[i])
        xj = tuple(np.asarray(v) for v in xs[j])
        num = (
            np.linalg.norm(m.sde.beta_at(ts[i], xi, b_of(i)) - m.sde.beta_at(ts[i], xj, b_of(i)))
            + np.linalg.norm(m.sde.gamma_at(ts[i], xi, b_of(i)) - m.sde.gamma_at(ts[i], xj, b_of(i)))
            + np.linalg.norm(m.sde.theta_at(ts[i], xi, b_of(i)) - m.sde.theta_at(ts[i], xj, b_of(i)))
        )
        ratios[i] = num / dx
    i_w = int(np.argmax(ratios))
    report.checks.append(
        CheckResult("D2 Lipschitz", bool(np.all(np.isfinite(ratios))),
                    float(ratios[i_w]), point(i_w), "estimated K")
    )

    kappas = np.empty(n)
    for i in range(n):
        xt = tuple(np.asarray(v) for v in xs[i])
        gg = m.sde.gamma_at(ts[i], xt, b_of(i))
        kappas[i] = np.linalg.eigvalsh(gg @ gg.T)[0]
    i_w = int(np.argmin(kappas))
    report.checks.append(
        CheckResult("D2 non-degeneracy", bool(kappas[i_w] > 1e-12),
                    float(kappas[i_w]), point(i_w), "estimated kappa")
    )

    # V1: boundedness of the backward-equation coefficients
    vmags = np.empty(n)
    for i in range(n):
        xt = tuple(np.asarray(v) for v in xs[i])
        vmags[i] = (
            np.linalg.norm(hj.a_at(ts[i], xt, b_of(i)))
            + np.linalg.norm([evaluate(c, ts[i], xt, b_of(i)) for c in hj.b])
            + abs(evaluate(hj.c, ts[i], xt, b_of(i)))
            + np.linalg.norm(hj.sigma_at(ts[i], xt, b_of(i)))
            + np.linalg.norm([evaluate(c, ts[i], xt, b_of(i)) for c in hj.mu])
        )
    i_w = int(np.argmax(vmags))
    report.checks.append(
        CheckResult("V1 boundedness", bool(np.all(np.isfinite(vmags))),
                    float(vmags[i_w]), point(i_w))
    )

    # V2: super-parabolicity  kappa|xi|^2 + |sigma^T xi|^2 <= 2 xi^T a xi
    gaps = np.empty(n)
    for i in range(n):
        xt = tuple(np.asarray(v) for v in xs[i])
        a = hj.a_at(ts[i], xt, b_of(i))
        sig = hj.sigma_at(ts[i], xt, b_of(i))
        gaps[i] = np.linalg.eigvalsh(2 * a - sig @ sig.T)[0]
    i_w = int(np.argmin(gaps))
    report.checks.append(
        CheckResult("V2 super-parabolicity", bool(gaps[i_w] > 1e-12),
                    float(gaps[i_w]), point(i_w), "min eig(2a - sigma sigma^T)")
    )

    # V4: obstacle ordering and terminal compatibility
    if m.lower is not None and m.upper is not None:
        seps = np.empty(n)
        for i in range(n):
            xt = tuple(np.asarray(v) for v in xs[i])
            seps[i] = float(m.upper.value_at(ts[i], xt, b_of(i))) - float(
                m.lower.value_at(ts[i], xt, b_of(i))
            )
        i_w = int(np.argmin(seps))
        report.checks.append(
            CheckResult("V4 ordering", bool(seps[i_w] >= -1e-9),
                        float(seps[i_w]), point(i_w), "min(upper - lower)")
        )

    margins = np.empty(n)
    for i in range(n):
        xt = tuple(np.asarray(v) for v in xs[i])
        bT = b_of(i)
        phi = float(evaluate(m.phi, m.horizon, xt, bT))
        lo = float(m.lower.value_at(m.horizon, xt, bT)) if m.lower else -np.inf
        hi = float(m.upper.value_at(m.horizon, xt, bT)) if m.upper else np.inf
        margins[i] = min(phi - lo, hi - phi)
    i_w = int(np.argmin(margins))
    report.checks.append(
        CheckResult("V4 terminal", bool(margins[i_w] >= -1e-9),
                    float(margins[i_w]), point(i_w),
                    "min(phi - lower(T), upper(T) - phi)")
    )
    return report


# --- mollifier ---------------------------------------------------------------


@lru_cache(maxsize=1)
def _bump_normalizer() -> float:
    """Reciprocal of the integral of exp(1/(s^2-1)) over (-1, 1)."""
    val, _ = integrate.quad(lambda s: np.exp(1.0 / (s * s - 1.0)), -1.0, 1.0)
    return 1.0 / val


def bump_kernel(s):
    """Compactly supported smooth bump on (-1, 1), unit mass in one dimension."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = _bump_normalizer() * np.exp(1.0 / (s[inside] ** 2 - 1.0))
    return out


def mollify(values: np.ndarray, spacing, n: int) -> np.ndarray:
    """Smooth a sampled field by the scaled bump kernel of support 1/n.

    values is a space-only array; spacing gives per-axis grid spacing.
    The discrete kernel weights are renormalized to total mass one so
    constants are preserved exactly; smoothing is linear and monotone.
    """
    values = np.asarray(values, dtype=float)
    spacing = (spacing,) if np.isscalar(spacing) else tuple(spacing)
    if len(spacing) != values.ndim:
        raise ValueError("spacing must give one step per axis")
    if n <= 0:
        raise ValueError("kernel index must be positive")
    support = 1.0 / n
    for h, size in zip(spacing, values.shape):
        if 2 * support > h * (size - 1):
            raise ValueError("kernel support exceeds grid extent")

    radii = [int(np.floor(support / h)) for h in spacing]
    offsets = np.meshgrid(
        *[np.arange(-r, r + 1) * h for r, h in zip(radii, spacing)],
        indexing="ij",
    )
    dist = np.sqrt(sum(o**2 for o in offsets))
    weights = np.zeros_like(dist)
    inside = dist * n < 1.0
    weights[inside] = np.exp(1.0 / ((dist[inside] * n) ** 2 - 1.0))
    total = weights.sum()
    if total <= 0:
        return values.copy()
    weights /= total
    return ndimage.convolve(values, weights, mode="nearest")
