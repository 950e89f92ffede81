"""Euler-Maruyama simulation of the state equation jointly with (W, B).

Increments are drawn from a counter-based Philox stream keyed by the seed,
so every path owns a fixed block of the stream and the batch is
bit-reproducible regardless of how the work would be scheduled.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .grids import _fmt
from .model import ModelSpec


@dataclass
class PathBatch:
    """Simulated trajectories of (X, B) on a uniform step grid from t0 to T."""

    t0: float
    times: np.ndarray          # (steps+1,)
    X: np.ndarray              # (n_paths, steps+1, d_star)
    B: np.ndarray              # (n_paths, steps+1, d2)
    seed: int
    antithetic: bool = False

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def steps(self) -> int:
        return self.X.shape[1] - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def dump_csv(self, path) -> None:
        d = self.X.shape[2]
        d2 = self.B.shape[2]
        cols = ["path", "step", "t"] + [f"X{i+1}" for i in range(d)] + [
            f"B{k+1}" for k in range(d2)]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for p in range(self.n_paths):
            for s, t in enumerate(self.times):
                row = [str(p), str(s), _fmt(t)]
                row += [_fmt(v) for v in self.X[p, s]]
                row += [_fmt(v) for v in self.B[p, s]]
                buf.write(",".join(row) + "\n")
        with open(path, "w") as fh:
            fh.write(buf.getvalue())


def simulate(
    model: ModelSpec,
    t0: float,
    x0,
    n_paths: int,
    steps: int,
    seed: int,
    antithetic: bool = False,
) -> PathBatch:
    """Simulate X_{s+dt} = X_s + beta dt + gamma dW + theta dB from (t0, x0).

    Coefficients are evaluated at (s, X_s, B_s).  With ``antithetic`` the
    odd paths reuse the negated increments of their even partner.
    """
    if not 0 <= t0 < model.horizon:
        raise ValueError("t0 must lie in [0, T)")
    sde = model.sde
    d, d1, d2 = sde.d_star, sde.d1, sde.d2
    x0 = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1), (d,))
    dt = (model.horizon - t0) / steps
    sq = np.sqrt(dt)
    times = t0 + dt * np.arange(steps + 1)

    rng = np.random.Generator(np.random.Philox(key=seed))
    incr = rng.standard_normal((n_paths, steps, d1 + d2))
    if antithetic:
        incr[1::2] = -incr[0::2][: incr[1::2].shape[0]]
    dW = incr[:, :, :d1] * sq
    dB = incr[:, :, d1:] * sq

    X = np.empty((n_paths, steps + 1, d))
    B = np.zeros((n_paths, steps + 1, d2))
    X[:, 0] = x0
    for s in range(steps):
        xs = tuple(X[:, s, i] for i in range(d))
        bs = B[:, s, 0] if d2 > 0 else None
        newx = X[:, s].copy()
        for i in range(d):
            drift = _eval(sde.beta[i], times[s], xs, bs, n_paths)
            newx[:, i] += drift * dt
            for l in range(d1):
                gam = _eval(sde.gamma[i][l], times[s], xs, bs, n_paths)
                newx[:, i] += gam * dW[:, s, l]
            for k in range(d2):
                the = _eval(sde.theta[i][k], times[s], xs, bs, n_paths)
                newx[:, i] += the * dB[:, s, k]
        if not np.all(np.isfinite(newx)):
            bad = np.argwhere(~np.isfinite(newx))[0]
            raise FloatingPointError(f"non-finite state at step {s}, path {bad[0]}")
        X[:, s + 1] = newx
        if d2 > 0:
            B[:, s + 1] = B[:, s] + dB[:, s]
    return PathBatch(t0=t0, times=times, X=X, B=B, seed=seed, antithetic=antithetic)


def _eval(comp, t, xs, bs, n):
    if callable(comp):
        out = np.asarray(comp(t, xs, bs), dtype=float)
        return np.broadcast_to(out, (n,))
    return np.full(n, float(comp))
